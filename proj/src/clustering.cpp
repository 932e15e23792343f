#include "xdc/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "xdc/threads.hpp"

namespace xdc {

namespace {

// Argmin over centroids, ties to the lowest index; rows in parallel.
std::vector<int> assign_rows(const std::vector<double>& centroids, int k, int dim,
                             const FeatureMatrix& f) {
  std::vector<int> out(f.rows, 0);
  parallel_for(f.rows, [&](int i) {
    const double* x = f.data.data() + static_cast<std::size_t>(i) * dim;
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
      const double* ctr = centroids.data() + static_cast<std::size_t>(c) * dim;
      double d = 0.0;
      for (int j = 0; j < dim; ++j) {
        const double t = x[j] - ctr[j];
        d += t * t;
      }
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    out[i] = best;
  });
  return out;
}

double total_inertia(const ClusterModel& m, const FeatureMatrix& f) {
  double s = 0.0;
  for (int i = 0; i < f.rows; ++i) {
    s += squared_distance(f.row(i), m.centroid(m.assignments[i]));
  }
  return s;
}

// k-means++: first centroid uniform, then each next proportional to squared
// distance from the nearest chosen centroid (inverse-CDF scan).
std::vector<double> kmeanspp_init(const FeatureMatrix& f, int k, Rng& rng) {
  const int n = f.rows;
  const int dim = f.dim;
  std::vector<double> centroids(static_cast<std::size_t>(k) * dim);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());

  auto place = [&](int c, int row) {
    std::copy_n(f.data.data() + static_cast<std::size_t>(row) * dim, dim,
                centroids.data() + static_cast<std::size_t>(c) * dim);
  };
  auto refresh = [&](int c) {
    parallel_for(n, [&](int i) {
      const double d = squared_distance(f.row(i), {centroids.data() + static_cast<std::size_t>(c) * dim,
                                                   static_cast<std::size_t>(dim)});
      if (d < d2[i]) d2[i] = d;
    });
  };

  place(0, rng.below(n));
  refresh(0);
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (double w : d2) total += w;
    int row;
    if (total > 0.0) {
      const double r = rng.uniform() * total;
      double cum = 0.0;
      row = n - 1;
      for (int i = 0; i < n; ++i) {
        cum += d2[i];
        if (cum > r) {
          row = i;
          break;
        }
      }
    } else {
      row = rng.below(n);  // every point already sits on a centroid
    }
    place(c, row);
    refresh(c);
  }
  return centroids;
}

}  // namespace

std::string to_string(FeatureTag t) {
  switch (t) {
    case FeatureTag::visual: return "visual";
    case FeatureTag::audio: return "audio";
    case FeatureTag::joint: return "joint";
  }
  return "?";
}

FeatureMatrix make_feature_matrix(int rows, int dim, FeatureTag tag) {
  if (rows < 1 || dim < 1) throw ConfigError("feature matrix needs rows >= 1 and dim >= 1");
  FeatureMatrix f;
  f.rows = rows;
  f.dim = dim;
  f.tag = tag;
  f.data.assign(static_cast<std::size_t>(rows) * dim, 0.0);
  return f;
}

void validate_features(const FeatureMatrix& f) {
  if (f.rows < 1 || f.dim < 1) throw ConfigError("feature matrix needs rows >= 1 and dim >= 1");
  if (f.data.size() != static_cast<std::size_t>(f.rows) * f.dim) {
    throw ConfigError("feature matrix data size does not match rows x dim");
  }
  for (double x : f.data) {
    if (!std::isfinite(x)) throw DataError("non-finite feature value");
  }
}

std::vector<double> l2_normalize(std::span<const double> v) {
  double nsq = 0.0;
  for (double x : v) nsq += x * x;
  std::vector<double> out(v.begin(), v.end());
  if (nsq > 0.0) {
    const double inv = 1.0 / std::sqrt(nsq);
    for (double& x : out) x *= inv;
  }
  return out;
}

std::vector<double> concat_normalized(std::span<const double> fv, std::span<const double> fa) {
  std::vector<double> out = l2_normalize(fv);
  const std::vector<double> na = l2_normalize(fa);
  out.insert(out.end(), na.begin(), na.end());
  return out;
}

FeatureMatrix joint_features(const FeatureMatrix& fv, const FeatureMatrix& fa) {
  if (fv.rows != fa.rows) throw DataError("joint_features: row-misaligned matrices");
  FeatureMatrix j = make_feature_matrix(fv.rows, fv.dim + fa.dim, FeatureTag::joint);
  parallel_for(fv.rows, [&](int i) {
    const auto row = concat_normalized(fv.row(i), fa.row(i));
    std::copy(row.begin(), row.end(), j.row(i).begin());
  });
  return j;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double t = a[i] - b[i];
    d += t * t;
  }
  return d;
}

std::vector<int> assign(const ClusterModel& model, const FeatureMatrix& f) {
  if (model.dim != f.dim) {
    throw ConfigError("assign: model dim " + std::to_string(model.dim) +
                      " != feature dim " + std::to_string(f.dim));
  }
  return assign_rows(model.centroids, model.k, model.dim, f);
}

int reassign_empty(ClusterModel& model, const FeatureMatrix& f, Rng& rng) {
  std::vector<int> counts(model.k, 0);
  for (int a : model.assignments) ++counts[a];

  int fixed = 0;
  for (int c = 0; c < model.k; ++c) {
    if (counts[c] != 0) continue;
    // Donor: most populous cluster, ties to the lowest id. Whenever an empty
    // cluster exists with k <= N, some cluster holds >= 2 points.
    int donor = 0;
    for (int d = 1; d < model.k; ++d) {
      if (counts[d] > counts[donor]) donor = d;
    }
    std::vector<int> members;
    for (int i = 0; i < f.rows; ++i) {
      if (model.assignments[i] == donor) members.push_back(i);
    }
    const int row = members[rng.below(static_cast<std::uint64_t>(members.size()))];
    model.assignments[row] = c;
    --counts[donor];
    ++counts[c];
    auto ctr = f.row(row);
    double* dst = model.centroids.data() + static_cast<std::size_t>(c) * model.dim;
    for (int j = 0; j < model.dim; ++j) dst[j] = ctr[j] + rng.uniform(-1e-6, 1e-6);
    ++fixed;
  }
  model.reassignment_count += fixed;
  return fixed;
}

ClusterModel kmeans_lloyd(const FeatureMatrix& f, std::vector<double> centroids, int k,
                          Rng& rng, const KMeansOptions& opts, LloydTrace* trace) {
  if (k < 1) throw ConfigError("kmeans: k must be >= 1");
  if (k > f.rows) {
    throw ConfigError("kmeans: k=" + std::to_string(k) + " exceeds N=" + std::to_string(f.rows));
  }
  if (centroids.size() != static_cast<std::size_t>(k) * f.dim) {
    throw ConfigError("kmeans_lloyd: centroid block does not match k x dim");
  }
  if (opts.max_iters < 1) throw ConfigError("kmeans: max_iters must be >= 1");
  if (opts.tol < 0) throw ConfigError("kmeans: tol must be >= 0");

  ClusterModel m;
  m.k = k;
  m.dim = f.dim;
  m.centroids = std::move(centroids);

  std::vector<int> prev;
  bool consistent = false;
  for (int it = 0; it < opts.max_iters; ++it) {
    m.assignments = assign_rows(m.centroids, k, f.dim, f);
    const int reassigned = reassign_empty(m, f, rng);
    if (trace) {
      trace->inertia.push_back(total_inertia(m, f));
      trace->reassignments.push_back(reassigned);
    }
    // Stability stop is checked first: it is scale-invariant, unlike tol.
    if (it > 0 && reassigned == 0 && m.assignments == prev) {
      consistent = true;
      break;
    }
    prev = m.assignments;

    // Means in fixed row order so worker count never changes the result.
    std::vector<double> sums(static_cast<std::size_t>(k) * f.dim, 0.0);
    std::vector<int> counts(k, 0);
    for (int i = 0; i < f.rows; ++i) {
      const int c = m.assignments[i];
      ++counts[c];
      const double* x = f.data.data() + static_cast<std::size_t>(i) * f.dim;
      double* s = sums.data() + static_cast<std::size_t>(c) * f.dim;
      for (int j = 0; j < f.dim; ++j) s[j] += x[j];
    }
    double shift_sq = 0.0;
    for (int c = 0; c < k; ++c) {
      double* dst = m.centroids.data() + static_cast<std::size_t>(c) * f.dim;
      double d = 0.0;
      for (int j = 0; j < f.dim; ++j) {
        const double nc = sums[static_cast<std::size_t>(c) * f.dim + j] / counts[c];
        const double t = nc - dst[j];
        d += t * t;
        dst[j] = nc;
      }
      shift_sq = std::max(shift_sq, d);
    }
    if (std::sqrt(shift_sq) < opts.tol) {
      m.assignments = assign_rows(m.centroids, k, f.dim, f);
      reassign_empty(m, f, rng);
      consistent = true;
      break;
    }
  }
  if (!consistent) {
    m.assignments = assign_rows(m.centroids, k, f.dim, f);
    reassign_empty(m, f, rng);
  }
  m.inertia = total_inertia(m, f);
  return m;
}

ClusterModel kmeans_fit(const FeatureMatrix& f, int k, std::uint64_t seed,
                        const KMeansOptions& opts) {
  validate_features(f);
  if (k < 1) throw ConfigError("kmeans: k must be >= 1");
  if (k > f.rows) {
    throw ConfigError("kmeans: k=" + std::to_string(k) + " exceeds N=" + std::to_string(f.rows));
  }
  if (opts.restarts < 1) throw ConfigError("kmeans: restarts must be >= 1");

  ClusterModel best;
  bool have = false;
  for (int r = 0; r < opts.restarts; ++r) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
    auto init = kmeanspp_init(f, k, rng);
    ClusterModel m = kmeans_lloyd(f, std::move(init), k, rng, opts);
    if (!have || m.inertia < best.inertia) {  // ties keep the earlier restart
      best = std::move(m);
      have = true;
    }
  }
  return best;
}

std::uint64_t fit_seed(std::uint64_t routing_seed, FeatureTag tag) {
  return derive_seed(routing_seed, 0x6b6d65616e73ULL, static_cast<std::uint64_t>(tag));
}

RoutingResult route_pseudo_labels(Regime regime, const FeatureMatrix& fv,
                                  const FeatureMatrix& fa, int k, std::uint64_t seed,
                                  const KMeansOptions& opts) {
  if (fv.rows != fa.rows) {
    throw DataError("route_pseudo_labels: feature matrices are row-misaligned (" +
                    std::to_string(fv.rows) + " vs " + std::to_string(fa.rows) + ")");
  }
  RoutingResult out;
  out.labels.source_regime = regime;
  out.labels.k = k;

  const Regime routed = routing_regime(regime);
  if (routed == Regime::cdc) {
    const FeatureMatrix joint = joint_features(fv, fa);
    out.joint_fit = kmeans_fit(joint, k, fit_seed(seed, FeatureTag::joint), opts);
    out.labels.for_visual_encoder = {{HeadId::joint, out.joint_fit->assignments}};
    out.labels.for_audio_encoder = {{HeadId::joint, out.joint_fit->assignments}};
    return out;
  }

  out.visual_fit = kmeans_fit(fv, k, fit_seed(seed, FeatureTag::visual), opts);
  out.audio_fit = kmeans_fit(fa, k, fit_seed(seed, FeatureTag::audio), opts);
  const auto& lv = out.visual_fit->assignments;
  const auto& la = out.audio_fit->assignments;
  switch (routed) {
    case Regime::sdc:
      out.labels.for_visual_encoder = {{HeadId::own, lv}};
      out.labels.for_audio_encoder = {{HeadId::own, la}};
      break;
    case Regime::mdc:
      out.labels.for_visual_encoder = {{HeadId::own, lv}, {HeadId::cross, la}};
      out.labels.for_audio_encoder = {{HeadId::own, la}, {HeadId::cross, lv}};
      break;
    case Regime::xdc:
      out.labels.for_visual_encoder = {{HeadId::cross, la}};
      out.labels.for_audio_encoder = {{HeadId::cross, lv}};
      break;
    default:
      throw ConfigError("route_pseudo_labels: unhandled regime");
  }
  return out;
}

FeatureMatrix normalize_rows(const FeatureMatrix& f) {
  FeatureMatrix out = f;
  parallel_for(f.rows, [&](int i) {
    const auto n = l2_normalize(f.row(i));
    std::copy(n.begin(), n.end(), out.row(i).begin());
  });
  return out;
}

FeatureMatrix whiten(const FeatureMatrix& f, double eps) {
  validate_features(f);
  const int n = f.rows;
  const int d = f.dim;

  std::vector<double> mean(d, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) mean[j] += f.data[static_cast<std::size_t>(i) * d + j];
  }
  for (double& m : mean) m /= n;

  // Covariance (biased), then a cyclic Jacobi eigensolver.
  std::vector<double> cov(static_cast<std::size_t>(d) * d, 0.0);
  for (int i = 0; i < n; ++i) {
    const double* x = f.data.data() + static_cast<std::size_t>(i) * d;
    for (int r = 0; r < d; ++r) {
      const double xr = x[r] - mean[r];
      for (int c = r; c < d; ++c) {
        cov[static_cast<std::size_t>(r) * d + c] += xr * (x[c] - mean[c]);
      }
    }
  }
  for (int r = 0; r < d; ++r) {
    for (int c = r; c < d; ++c) {
      const double v = cov[static_cast<std::size_t>(r) * d + c] / n;
      cov[static_cast<std::size_t>(r) * d + c] = v;
      cov[static_cast<std::size_t>(c) * d + r] = v;
    }
  }

  std::vector<double> evec(static_cast<std::size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i) evec[static_cast<std::size_t>(i) * d + i] = 1.0;
  auto at = [&](std::vector<double>& m, int r, int c) -> double& {
    return m[static_cast<std::size_t>(r) * d + c];
  };
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < d; ++p) {
      for (int q = p + 1; q < d; ++q) off += at(cov, p, q) * at(cov, p, q);
    }
    if (off < 1e-24) break;
    for (int p = 0; p < d; ++p) {
      for (int q = p + 1; q < d; ++q) {
        const double apq = at(cov, p, q);
        if (apq == 0.0) continue;
        const double theta = (at(cov, q, q) - at(cov, p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int i = 0; i < d; ++i) {
          const double aip = at(cov, i, p), aiq = at(cov, i, q);
          at(cov, i, p) = c * aip - s * aiq;
          at(cov, i, q) = s * aip + c * aiq;
        }
        for (int i = 0; i < d; ++i) {
          const double api = at(cov, p, i), aqi = at(cov, q, i);
          at(cov, p, i) = c * api - s * aqi;
          at(cov, q, i) = s * api + c * aqi;
        }
        for (int i = 0; i < d; ++i) {
          const double vip = at(evec, i, p), viq = at(evec, i, q);
          at(evec, i, p) = c * vip - s * viq;
          at(evec, i, q) = s * vip + c * viq;
        }
      }
    }
  }

  std::vector<double> scale(d);
  for (int j = 0; j < d; ++j) {
    scale[j] = 1.0 / std::sqrt(std::max(at(cov, j, j), 0.0) + eps);
  }

  FeatureMatrix out = make_feature_matrix(n, d, f.tag);
  parallel_for(n, [&](int i) {
    const double* x = f.data.data() + static_cast<std::size_t>(i) * d;
    double* y = out.data.data() + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) {
      double acc = 0.0;
      for (int r = 0; r < d; ++r) acc += (x[r] - mean[r]) * evec[static_cast<std::size_t>(r) * d + j];
      y[j] = acc * scale[j];
    }
  });
  return out;
}

}  // namespace xdc
