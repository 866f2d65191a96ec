#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tist/rng.hpp"
#include "tist/tensor.hpp"

namespace tist {

enum class Domain { source, target };

std::string to_string(Domain d);

struct Sample {
  std::string id;
  Image image;
  std::optional<LabelMap> label;
  Domain domain = Domain::source;
};

using Dataset = std::vector<Sample>;

// Read-only window onto target-domain samples as the trainer sees them:
// images only. Asking for a label is a contract violation.
class UnlabeledView {
 public:
  UnlabeledView() = default;
  UnlabeledView(const Dataset& dataset, std::vector<std::size_t> indices);
  explicit UnlabeledView(const Dataset& dataset);

  std::size_t size() const { return indices_.size(); }
  const Image& image(std::size_t i) const;
  const std::string& id(std::size_t i) const;
  [[noreturn]] const LabelMap& label(std::size_t i) const;

 private:
  const Dataset* dataset_ = nullptr;
  std::vector<std::size_t> indices_;
};

struct DomainShift {
  double brightness = 0.25;
  double noise_sigma = 0.08;
  double blur_sigma = 1.0;

  friend bool operator==(const DomainShift&, const DomainShift&) = default;
};

struct SynthConfig {
  int num_source = 64;
  int num_target = 64;
  int height = 128;
  int width = 128;
  int channels = 3;
  // Class 0 is background; each foreground class gets one shape per image.
  int num_classes = 2;
  DomainShift shift;

  friend bool operator==(const SynthConfig&, const SynthConfig&) = default;
};

void validate(const SynthConfig& config);

// One foreground shape: an ellipse (semi axes, rotation) or a star-shaped
// polygon given by its vertices. Pixels are inside when their centre is.
struct ShapeSpec {
  enum class Kind { ellipse, polygon };
  Kind kind = Kind::ellipse;
  double center_y = 0, center_x = 0;
  double semi_a = 0, semi_b = 0, angle = 0;
  std::vector<std::pair<double, double>> vertices;  // (y, x)

  double area() const;
};

ShapeSpec sample_shape(Rng& rng, int height, int width);

// Writes class_id into every covered pixel; returns the number covered.
std::size_t rasterize(const ShapeSpec& shape, LabelMap& labels, std::int32_t class_id);

// Clean source renderings and shifted target renderings of the same
// generative family. Both carry masks; target masks are for evaluation.
std::pair<Dataset, Dataset> generate_synthetic(const SynthConfig& config, std::uint64_t seed);

// Applies the fixed target-domain operator: brightness offset, Gaussian
// blur, additive Gaussian noise, clamp to [0, 1].
Image apply_domain_shift(const Image& image, const DomainShift& shift, std::uint64_t noise_seed);

struct FolderLayout {
  std::string images_dir = "images";
  std::string masks_dir = "masks";
  Domain domain = Domain::source;
};

// images/<stem>.png paired with masks/<stem>.png. Samples without a mask
// are unlabeled. Result is sorted by id.
Dataset load_folder_dataset(const std::filesystem::path& root, const FolderLayout& layout = {});

void export_folder_dataset(const Dataset& dataset, const std::filesystem::path& root, const FolderLayout& layout = {});

struct FoldSplit {
  int fold_index = 0;
  std::vector<std::string> train_source_ids;
  std::vector<std::string> train_target_ids;
  std::vector<std::string> test_ids;
  // Held-out source samples, used only to report source-domain Dice.
  std::vector<std::string> source_test_ids;
};

// Shuffled balanced partition of 0..n-1 into k groups; the first n % k
// groups receive one extra element.
std::vector<std::vector<std::size_t>> partition_indices(std::size_t n, int k, std::uint64_t seed);

// k-fold split of the target pool (test = held-out target images) with the
// source pool partitioned alongside for source-domain reporting.
std::vector<FoldSplit> make_folds(const Dataset& source, const Dataset& target, int k, std::uint64_t seed);

std::vector<std::size_t> indices_of(const Dataset& dataset, const std::vector<std::string>& ids);

// Endless sample order: consecutive reshuffled permutations of 0..n-1.
// index_at is a pure function of (n, seed, stream, position).
class CyclicSampler {
 public:
  CyclicSampler(std::size_t n, std::uint64_t seed, std::uint64_t stream);
  std::size_t index_at(std::uint64_t position) const;
  std::size_t size() const { return n_; }

 private:
  std::size_t n_;
  std::uint64_t seed_;
  std::uint64_t stream_;
  mutable std::uint64_t cached_cycle_ = ~0ULL;
  mutable std::vector<std::size_t> order_;
};

}  // namespace tist
