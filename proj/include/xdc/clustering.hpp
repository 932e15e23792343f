#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xdc/error.hpp"
#include "xdc/nn.hpp"
#include "xdc/regime.hpp"
#include "xdc/rng.hpp"

namespace xdc {

enum class FeatureTag { visual, audio, joint };

std::string to_string(FeatureTag t);

struct FeatureMatrix {
  int rows = 0;
  int dim = 0;
  std::vector<double> data;  // row-major N x dim
  FeatureTag tag = FeatureTag::visual;

  std::span<const double> row(int i) const {
    return {data.data() + static_cast<std::size_t>(i) * dim, static_cast<std::size_t>(dim)};
  }
  std::span<double> row(int i) {
    return {data.data() + static_cast<std::size_t>(i) * dim, static_cast<std::size_t>(dim)};
  }
};

FeatureMatrix make_feature_matrix(int rows, int dim, FeatureTag tag);
void validate_features(const FeatureMatrix& f);

struct ClusterModel {
  int k = 0;
  int dim = 0;
  std::vector<double> centroids;  // k x dim
  std::vector<int> assignments;   // one per row of the fitted matrix
  double inertia = 0.0;
  int reassignment_count = 0;

  std::span<const double> centroid(int c) const {
    return {centroids.data() + static_cast<std::size_t>(c) * dim,
            static_cast<std::size_t>(dim)};
  }
};

struct KMeansOptions {
  int max_iters = 100;
  double tol = 1e-6;
  int restarts = 10;

  bool operator==(const KMeansOptions&) const = default;
};

std::vector<double> l2_normalize(std::span<const double> v);
std::vector<double> concat_normalized(std::span<const double> fv, std::span<const double> fa);

// Row-wise concat_normalized over two aligned matrices; tag = joint.
FeatureMatrix joint_features(const FeatureMatrix& fv, const FeatureMatrix& fa);

double squared_distance(std::span<const double> a, std::span<const double> b);

// Argmin over centroids of squared distance, ties to the lowest index.
std::vector<int> assign(const ClusterModel& model, const FeatureMatrix& f);

// Ensures no cluster is empty: each empty centroid steals a point sampled from
// the most populous cluster (the point is reassigned to it and the centroid is
// placed on the point plus tiny noise). Returns how many centroids were
// re-seeded; bumps model.reassignment_count by the same amount.
int reassign_empty(ClusterModel& model, const FeatureMatrix& f, Rng& rng);

struct LloydTrace {
  std::vector<double> inertia;     // after each assignment step
  std::vector<int> reassignments;  // empty-cluster fixes that step
};

// Lloyd iterations from explicitly given centroids (no k-means++ seeding).
// Stops on stable assignments, centroid shift < tol, or max_iters; always ends
// on an assignment step so final assignments are argmin-consistent.
ClusterModel kmeans_lloyd(const FeatureMatrix& f, std::vector<double> centroids, int k,
                          Rng& rng, const KMeansOptions& opts,
                          LloydTrace* trace = nullptr);

// k-means++ seeding + Lloyd, best of opts.restarts by inertia (ties to the
// lowest restart index).
ClusterModel kmeans_fit(const FeatureMatrix& f, int k, std::uint64_t seed,
                        const KMeansOptions& opts = {});

struct PseudoLabelSet {
  struct HeadLabels {
    HeadId head;
    std::vector<int> labels;
  };
  std::vector<HeadLabels> for_visual_encoder;
  std::vector<HeadLabels> for_audio_encoder;
  Regime source_regime = Regime::xdc;
  int k = 0;
};

struct RoutingResult {
  PseudoLabelSet labels;
  std::optional<ClusterModel> visual_fit;
  std::optional<ClusterModel> audio_fit;
  std::optional<ClusterModel> joint_fit;
};

// Seed used for the k-means fit of a given feature matrix inside
// route_pseudo_labels; public so the data flow can be recomputed externally.
std::uint64_t fit_seed(std::uint64_t routing_seed, FeatureTag tag);

// Pseudo-label routing per regime:
//   sdc: own-modality clusters to each encoder's `own` head
//   mdc: own + cross assignments to two heads per encoder
//   cdc: one fit of the l2-normalized concatenation, shared `joint` labels
//   xdc (and same-modality variants): swapped — each encoder trains on the
//        other feature matrix's clusters via its `cross` head
// Exactly 1 fit for cdc, 2 otherwise.
RoutingResult route_pseudo_labels(Regime regime, const FeatureMatrix& fv,
                                  const FeatureMatrix& fa, int k, std::uint64_t seed,
                                  const KMeansOptions& opts = {});

// Row-wise l2 normalization (optional preprocessing for all regimes).
FeatureMatrix normalize_rows(const FeatureMatrix& f);

// PCA whitening: center, rotate onto eigenvectors of the covariance, divide by
// sqrt(eigenvalue + eps). Off by default in the pipeline; not asserted as the
// reference behavior.
FeatureMatrix whiten(const FeatureMatrix& f, double eps = 1e-8);

}  // namespace xdc
