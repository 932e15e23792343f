#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xdc/error.hpp"
#include "xdc/rng.hpp"

namespace xdc {

struct PairedSample {
  std::uint64_t id = 0;
  int true_class = 0;
  std::vector<double> visual;
  std::vector<double> audio;
};

enum class Nonlinearity { none, relu_mixing };

std::string to_string(Nonlinearity n);
Nonlinearity parse_nonlinearity(const std::string& s);

// Paired two-modality generator: each class has a shared latent prototype plus
// per-modality private prototypes; samples are mixed into raw feature space
// and perturbed by i.i.d. Gaussian noise. Class info lives entirely in the
// clean part, so noise_sigma is the single difficulty knob.
struct GeneratorSpec {
  int num_classes = 10;
  int samples_per_class = 200;
  int d_v_raw = 32;
  int d_a_raw = 24;
  double shared_signal_strength = 1.0;
  double visual_private_strength = 0.5;
  double audio_private_strength = 0.5;
  double noise_sigma = 0.3;
  Nonlinearity nonlinearity = Nonlinearity::none;
  std::uint64_t seed = 7;

  bool operator==(const GeneratorSpec&) const = default;
};

std::vector<PairedSample> generate(const GeneratorSpec& spec);

// Binary format: magic "XDCD", version u32, N u64, d_v u32, d_a u32,
// num_classes u32, then N records (id u64, class u32, visual f64[d_v],
// audio f64[d_a]); everything little-endian.
void save_dataset(const std::vector<PairedSample>& samples, const std::string& path);
std::vector<PairedSample> load_dataset(const std::string& path);

// CSV alternative for inspection: header row, one sample per line, %.17g reals.
void save_dataset_csv(const std::vector<PairedSample>& samples, const std::string& path);
std::vector<PairedSample> load_dataset_csv(const std::string& path);

int num_classes_of(const std::vector<PairedSample>& samples);

struct SplitIndices {
  std::vector<int> train;
  std::vector<int> held_out;
};

// Seeded random partition; held-out gets round(N * held_out_fraction) rows.
SplitIndices random_split(int n, double held_out_fraction, std::uint64_t seed);

// Seeded per-class partition: each class contributes round(count * fraction)
// rows to the held-out side.
SplitIndices stratified_split(const std::vector<int>& labels, double held_out_fraction,
                              std::uint64_t seed);

}  // namespace xdc
