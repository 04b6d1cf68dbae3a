#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace drsl {

enum class Split : std::uint8_t { train, test };
enum class NoiseTag : std::uint8_t { clean, closed, open };
enum class NoiseType : std::uint8_t { symmetric, asymmetric };

std::string to_string(Split s);
std::string to_string(NoiseTag t);
std::string to_string(NoiseType t);
NoiseType noise_type_from_string(const std::string& s);

/// A clean labeled pool: features, true labels in [0, c_total), and a
/// train/test split. Serves as the base for noise injection.
struct CleanSource {
  Eigen::MatrixXf features;  // n x dim, row per sample
  std::vector<int> true_label;
  std::vector<Split> split;
  int c_total = 0;

  int size() const { return static_cast<int>(features.rows()); }
  int dim() const { return static_cast<int>(features.cols()); }
  void check() const;  // throws ConfigError on invariant violation
};

/// Closed-set noise recipe. `known_classes` is C; asymmetric noise flips
/// class c to (c+1) mod C, symmetric noise flips uniformly to one of the
/// other C-1 classes.
struct NoiseSpec {
  int known_classes = 0;
  NoiseType noise_type = NoiseType::symmetric;
  double noise_rate = 0.0;
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

/// A noisy training task. Train samples carry a given label in
/// [0, c_known); hidden true labels >= c_known mark open-set samples.
/// Open-set *test* samples have no valid known-class label and store
/// given_label = -1.
struct LabeledDataset {
  Eigen::MatrixXf features;
  std::vector<int> given_label;
  std::vector<int> true_label;
  std::vector<NoiseTag> tag;
  std::vector<Split> split;
  int c_known = 0;
  int c_total = 0;
  nlohmann::json spec_echo;  // provenance: how this dataset was built

  int size() const { return static_cast<int>(features.rows()); }
  int dim() const { return static_cast<int>(features.cols()); }
  std::vector<int> train_indices() const;
  std::vector<int> test_indices() const;
  void check() const;  // tag consistency + label range invariants
};

/// Isotropic Gaussian clusters, one per class, unit within-class variance.
/// Cluster means sit at distance `separation` from the origin along
/// orthonormal directions when dim >= c_total (random unit directions
/// otherwise). 80% of each class goes to train, the rest to test.
CleanSource synth_gaussian_source(int c_total, int dim, int per_class,
                                  double separation, std::uint64_t seed);

/// Splits a source into the known-class pool (classes 0..c_known-1) and
/// the open pool (the remaining classes). c_known == c_total yields an
/// empty open pool (closed-world mode).
std::pair<CleanSource, CleanSource> carve_open_world(const CleanSource& source,
                                                     int c_known,
                                                     std::uint64_t seed);

/// Flips exactly round(noise_rate * n_train) given labels in the known
/// pool. Test split is untouched.
LabeledDataset inject_closed_noise(const CleanSource& known_pool,
                                   const NoiseSpec& spec);

/// Mixes open-pool train samples into the train split (uniform random
/// given label, tag = open) until the train split reaches
/// `target_train_size`, and appends all open-pool test samples to the
/// test split.
LabeledDataset inject_open_noise(const LabeledDataset& known,
                                 const CleanSource& open_pool,
                                 int target_train_size, std::uint64_t seed);

// Dataset container format, one file:
//   line 1   header JSON: {"format","version","c_known","c_total","dim",
//            "n_samples","n_train","n_test","feature_bytes","spec"}
//   block    n_samples*dim little-endian float32, row-major, index order
//   then     one JSON record per sample:
//            {"index","given_label","true_label","noise_tag","split"}
void save_dataset(const LabeledDataset& ds, const std::string& path);
LabeledDataset load_dataset(const std::string& path);

}  // namespace drsl
