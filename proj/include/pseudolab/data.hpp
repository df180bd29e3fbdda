#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "pseudolab/rng.hpp"
#include "pseudolab/tensor.hpp"

namespace pseudolab {

enum class LabelKind : std::uint8_t { True, Pseudo, None };

std::string to_string(LabelKind kind);

struct Sample {
  std::size_t id = 0;
  Tensor image;  // C x H x W
  std::optional<std::size_t> label;
  LabelKind label_kind = LabelKind::None;
};

// Ordered samples sharing one image shape, with unique ids.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::size_t classes, std::string provenance = {})
      : classes_(classes), provenance_(std::move(provenance)) {}

  // Throws ValidationError on a duplicate id, a shape mismatch, a label
  // outside [0, classes) or a label/label_kind disagreement.
  void add(Sample sample);

  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  std::size_t classes() const { return classes_; }
  const std::string& provenance() const { return provenance_; }
  void set_provenance(std::string p) { provenance_ = std::move(p); }
  const Shape& image_shape() const { return image_shape_; }

  const std::vector<Sample>& samples() const { return samples_; }
  const Sample& operator[](std::size_t i) const { return samples_[i]; }
  bool contains(std::size_t id) const { return ids_.count(id) != 0; }

  std::vector<std::size_t> ids() const;
  // Labels of every sample; throws ValidationError if any sample is unlabeled.
  std::vector<std::size_t> labels() const;
  std::vector<std::size_t> class_histogram() const;
  // N x C x H x W batch in sample order.
  Tensor images() const;

  // Samples whose ids are listed, in the listed order.
  Dataset subset(std::span<const std::size_t> ids) const;

 private:
  std::size_t classes_ = 0;
  std::string provenance_;
  Shape image_shape_;
  std::vector<Sample> samples_;
  std::unordered_set<std::size_t> ids_;
};

// Ground-truth labels of stripped samples. Only the evaluation harness holds
// one; nothing under selftrain accepts it.
class SealedTruth {
 public:
  void record(std::size_t id, std::size_t label) { labels_[id] = label; }
  std::size_t label_of(std::size_t id) const;
  bool contains(std::size_t id) const { return labels_.count(id) != 0; }
  std::size_t size() const { return labels_.size(); }
  const std::map<std::size_t, std::size_t>& entries() const { return labels_; }

 private:
  std::map<std::size_t, std::size_t> labels_;
};

inline constexpr std::size_t kCifarRecordBytes = 3073;
inline constexpr std::size_t kCifarSide = 32;
inline constexpr std::size_t kCifarClasses = 10;

// Raw 0-255 pixel values, ids first_id, first_id + 1, ... in file order.
Dataset parse_cifar10_bin(std::span<const std::uint8_t> bytes, std::size_t first_id = 0);
// Inverse of parse_cifar10_bin for raw 3 x 32 x 32 labeled datasets.
std::vector<std::uint8_t> serialize_cifar10_bin(const Dataset& raw);

// Divides every pixel by 255.
Dataset normalize(const Dataset& raw);

struct SplitResult {
  Dataset labeled;
  Dataset unlabeled;  // labels stripped
  SealedTruth truth;  // labels of `unlabeled`
};

// Exactly n random samples per class go to the labeled side.
SplitResult stratified_split(const Dataset& data, std::size_t labeled_per_class, Rng& rng);

struct Holdout {
  Dataset kept;
  Dataset held;
};

// Exactly `per_class` random samples of every class go to the held side,
// labels kept on both sides.
Holdout stratified_take(const Dataset& data, std::size_t per_class, Rng& rng);

// Moves round(fraction * n_c) random samples of every class c (at least one,
// never all) to the held side.
Holdout stratified_holdout(const Dataset& data, double fraction, Rng& rng);

// Additive N(0, sigma^2) per pixel, clamped to [0, 1]. Each sample draws from
// rng.split(sample id), so results do not depend on sample order.
Dataset inject_noise(const Dataset& data, double sigma, const Rng& rng);

// Class-stratified partition of sample ids into k folds; within every class,
// fold sizes differ by at most one with the larger folds first.
std::vector<std::vector<std::size_t>> kfold_split(const Dataset& data, std::size_t k, Rng& rng);

struct SynthSpec {
  std::size_t classes = 4;
  std::size_t per_class = 50;
  std::size_t channels = 3;
  std::size_t height = 16;
  std::size_t width = 16;
  double separation = 0.4;  // patch brightness above background
  double noise = 0.4;       // per-pixel Gaussian std before clamping
  double background = 0.3;
  double patch_fraction = 0.5;  // patch side relative to its grid cell, in (0, 1]
};

struct PatchBox {
  std::size_t y0, x0, y1, x1;  // half-open
};

// Class c is a bright square at a class-specific grid cell on a flat
// background; labels are ground truth. Samples alternate classes.
Dataset synth_dataset(const SynthSpec& spec, Rng& rng);
PatchBox synth_patch_box(const SynthSpec& spec, std::size_t label);

}  // namespace pseudolab
