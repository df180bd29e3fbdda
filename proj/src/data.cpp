#include "pseudolab/data.hpp"

#include <algorithm>
#include <cmath>

#include "pseudolab/error.hpp"

namespace pseudolab {

std::string to_string(LabelKind kind) {
  switch (kind) {
    case LabelKind::True: return "true";
    case LabelKind::Pseudo: return "pseudo";
    case LabelKind::None: return "none";
  }
  return "none";
}

void Dataset::add(Sample s) {
  if (ids_.count(s.id)) throw ValidationError("duplicate sample id " + std::to_string(s.id));
  if (samples_.empty()) {
    if (s.image.rank() != 3) {
      throw ValidationError("sample images must be C x H x W, got " + shape_string(s.image.shape()));
    }
    image_shape_ = s.image.shape();
  } else if (s.image.shape() != image_shape_) {
    throw ValidationError("sample " + std::to_string(s.id) + " has shape " +
                          shape_string(s.image.shape()) + ", dataset uses " +
                          shape_string(image_shape_));
  }
  if (s.label.has_value() != (s.label_kind != LabelKind::None)) {
    throw ValidationError("sample " + std::to_string(s.id) + ": label presence disagrees with kind");
  }
  if (s.label && *s.label >= classes_) {
    throw ValidationError("sample " + std::to_string(s.id) + ": label " + std::to_string(*s.label) +
                          " outside [0, " + std::to_string(classes_) + ")");
  }
  ids_.insert(s.id);
  samples_.push_back(std::move(s));
}

std::vector<std::size_t> Dataset::ids() const {
  std::vector<std::size_t> out;
  out.reserve(samples_.size());
  for (const auto& s : samples_) out.push_back(s.id);
  return out;
}

std::vector<std::size_t> Dataset::labels() const {
  std::vector<std::size_t> out;
  out.reserve(samples_.size());
  for (const auto& s : samples_) {
    if (!s.label) throw ValidationError("sample " + std::to_string(s.id) + " is unlabeled");
    out.push_back(*s.label);
  }
  return out;
}

std::vector<std::size_t> Dataset::class_histogram() const {
  std::vector<std::size_t> h(classes_, 0);
  for (const auto& s : samples_)
    if (s.label) ++h[*s.label];
  return h;
}

Tensor Dataset::images() const {
  if (samples_.empty()) throw ValidationError("cannot batch an empty dataset");
  Shape shape{samples_.size()};
  shape.insert(shape.end(), image_shape_.begin(), image_shape_.end());
  Tensor out(shape);
  const std::size_t stride = shape_size(image_shape_);
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    std::copy_n(samples_[i].image.data(), stride, out.data() + i * stride);
  }
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> ids) const {
  std::unordered_map<std::size_t, std::size_t> where;
  for (std::size_t i = 0; i < samples_.size(); ++i) where[samples_[i].id] = i;
  Dataset out(classes_, provenance_);
  for (auto id : ids) {
    auto it = where.find(id);
    if (it == where.end()) throw ValidationError("subset: unknown sample id " + std::to_string(id));
    out.add(samples_[it->second]);
  }
  return out;
}

std::size_t SealedTruth::label_of(std::size_t id) const {
  auto it = labels_.find(id);
  if (it == labels_.end()) throw LookupError("no sealed label for sample " + std::to_string(id));
  return it->second;
}

Dataset parse_cifar10_bin(std::span<const std::uint8_t> bytes, std::size_t first_id) {
  if (bytes.size() % kCifarRecordBytes != 0) {
    const std::size_t offset = bytes.size() - bytes.size() % kCifarRecordBytes;
    throw FormatError("truncated CIFAR-10 stream: partial record of " +
                      std::to_string(bytes.size() % kCifarRecordBytes) + " bytes at offset " +
                      std::to_string(offset));
  }
  Dataset ds(kCifarClasses, "cifar10-bin");
  const std::size_t n = bytes.size() / kCifarRecordBytes;
  const std::size_t plane = kCifarSide * kCifarSide;
  for (std::size_t r = 0; r < n; ++r) {
    const std::uint8_t* rec = bytes.data() + r * kCifarRecordBytes;
    if (rec[0] > 9) {
      throw FormatError("corrupt CIFAR-10 record " + std::to_string(r) + ": label byte " +
                        std::to_string(rec[0]) + " at offset " +
                        std::to_string(r * kCifarRecordBytes));
    }
    Tensor img({3, kCifarSide, kCifarSide});
    for (std::size_t i = 0; i < 3 * plane; ++i) img[i] = rec[1 + i];
    ds.add(Sample{first_id + r, std::move(img), rec[0], LabelKind::True});
  }
  return ds;
}

std::vector<std::uint8_t> serialize_cifar10_bin(const Dataset& raw) {
  if (!raw.empty() && raw.image_shape() != Shape{3, kCifarSide, kCifarSide}) {
    throw ValidationError("CIFAR-10 records need 3 x 32 x 32 images");
  }
  std::vector<std::uint8_t> out;
  out.reserve(raw.size() * kCifarRecordBytes);
  for (const auto& s : raw.samples()) {
    if (!s.label || *s.label > 9) {
      throw ValidationError("sample " + std::to_string(s.id) + " lacks a CIFAR-10 label");
    }
    out.push_back(static_cast<std::uint8_t>(*s.label));
    for (double v : s.image.values()) {
      if (v < 0.0 || v > 255.0 || v != std::floor(v)) {
        throw ValidationError("sample " + std::to_string(s.id) + " holds non-byte pixel value");
      }
      out.push_back(static_cast<std::uint8_t>(v));
    }
  }
  return out;
}

Dataset normalize(const Dataset& raw) {
  Dataset out(raw.classes(), raw.provenance());
  for (Sample s : raw.samples()) {
    for (auto& v : s.image.values()) {
      if (!(v >= 0.0 && v <= 255.0)) {
        throw ValidationError("sample " + std::to_string(s.id) + ": pixel value " +
                              std::to_string(v) + " outside [0, 255]");
      }
      v /= 255.0;
    }
    out.add(std::move(s));
  }
  return out;
}

namespace {

std::vector<std::vector<std::size_t>> positions_by_class(const Dataset& data) {
  std::vector<std::vector<std::size_t>> by(data.classes());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data[i];
    if (!s.label) throw ValidationError("sample " + std::to_string(s.id) + " is unlabeled");
    by[*s.label].push_back(i);
  }
  return by;
}

}  // namespace

namespace {

Holdout take_marked(const Dataset& data, const std::vector<bool>& held) {
  Holdout h{Dataset(data.classes(), data.provenance()), Dataset(data.classes(), data.provenance())};
  for (std::size_t i = 0; i < data.size(); ++i) (held[i] ? h.held : h.kept).add(data[i]);
  return h;
}

}  // namespace

Holdout stratified_take(const Dataset& data, std::size_t per_class, Rng& rng) {
  auto by_class = positions_by_class(data);
  std::vector<bool> held(data.size(), false);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    if (members.size() < per_class) {
      throw ValidationError("class " + std::to_string(c) + " has " +
                            std::to_string(members.size()) + " samples, fewer than the " +
                            std::to_string(per_class) + " requested");
    }
    rng.shuffle(members);
    for (std::size_t i = 0; i < per_class; ++i) held[members[i]] = true;
  }
  return take_marked(data, held);
}

SplitResult stratified_split(const Dataset& data, std::size_t labeled_per_class, Rng& rng) {
  Holdout h = stratified_take(data, labeled_per_class, rng);
  SplitResult r{std::move(h.held), Dataset(data.classes(), data.provenance()), SealedTruth{}};
  for (Sample s : h.kept.samples()) {
    r.truth.record(s.id, *s.label);
    s.label.reset();
    s.label_kind = LabelKind::None;
    r.unlabeled.add(std::move(s));
  }
  return r;
}

Holdout stratified_holdout(const Dataset& data, double fraction, Rng& rng) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ValidationError("holdout fraction must be in (0, 1)");
  auto by_class = positions_by_class(data);
  std::vector<bool> held(data.size(), false);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    if (members.empty()) continue;
    if (members.size() < 2) {
      throw ValidationError("class " + std::to_string(c) + " has a single sample; cannot hold one out");
    }
    auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(members.size())));
    take = std::clamp<std::size_t>(take, 1, members.size() - 1);
    rng.shuffle(members);
    for (std::size_t i = 0; i < take; ++i) held[members[i]] = true;
  }
  return take_marked(data, held);
}

Dataset inject_noise(const Dataset& data, double sigma, const Rng& rng) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    throw ValidationError("noise sigma must be a finite non-negative number");
  }
  Dataset out(data.classes(), data.provenance());
  for (Sample s : data.samples()) {
    if (sigma > 0.0) {
      Rng local = rng.split(s.id);
      for (auto& v : s.image.values()) v = std::clamp(v + sigma * local.normal(), 0.0, 1.0);
    }
    out.add(std::move(s));
  }
  return out;
}

std::vector<std::vector<std::size_t>> kfold_split(const Dataset& data, std::size_t k, Rng& rng) {
  if (k < 2) throw ValidationError("k-fold split needs k >= 2");
  auto by_class = positions_by_class(data);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (by_class[c].size() < k) {
      throw ValidationError("class " + std::to_string(c) + " has " +
                            std::to_string(by_class[c].size()) + " samples, fewer than k = " +
                            std::to_string(k));
    }
  }
  std::vector<std::vector<std::size_t>> folds(k);
  for (auto& members : by_class) {
    rng.shuffle(members);
    const std::size_t base = members.size() / k, extra = members.size() % k;
    std::size_t at = 0;
    for (std::size_t f = 0; f < k; ++f) {
      const std::size_t take = base + (f < extra ? 1 : 0);
      for (std::size_t i = 0; i < take; ++i) folds[f].push_back(data[members[at++]].id);
    }
  }
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

namespace {

std::size_t grid_side(std::size_t classes) {
  std::size_t g = 1;
  while (g * g < classes) ++g;
  return g;
}

}  // namespace

PatchBox synth_patch_box(const SynthSpec& spec, std::size_t label) {
  const std::size_t g = grid_side(spec.classes);
  const std::size_t ch = spec.height / g, cw = spec.width / g;
  const std::size_t row = label / g, col = label % g;
  auto side = [&](std::size_t cell) {
    const auto v = static_cast<std::size_t>(std::llround(spec.patch_fraction * static_cast<double>(cell)));
    return std::clamp<std::size_t>(v, 1, cell);
  };
  const std::size_t ph = side(ch), pw = side(cw);
  const std::size_t y0 = row * ch + (ch - ph) / 2, x0 = col * cw + (cw - pw) / 2;
  return {y0, x0, y0 + ph, x0 + pw};
}

Dataset synth_dataset(const SynthSpec& spec, Rng& rng) {
  if (spec.classes < 2) throw ValidationError("synthetic data needs at least 2 classes");
  if (spec.channels == 0 || spec.per_class == 0) {
    throw ValidationError("synthetic data needs positive channels and per-class count");
  }
  const std::size_t g = grid_side(spec.classes);
  if (spec.height < 2 * g || spec.width < 2 * g) {
    throw ValidationError("image " + std::to_string(spec.height) + "x" + std::to_string(spec.width) +
                          " too small for " + std::to_string(spec.classes) + " patch cells");
  }
  if (!(spec.separation >= 0.0) || !(spec.noise >= 0.0)) {
    throw ValidationError("separation and noise must be non-negative");
  }
  if (!(spec.patch_fraction > 0.0 && spec.patch_fraction <= 1.0)) {
    throw ValidationError("patch_fraction must be in (0, 1]");
  }
  Dataset ds(spec.classes, "synth");
  const std::size_t n = spec.classes * spec.per_class;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % spec.classes;
    const PatchBox box = synth_patch_box(spec, label);
    Tensor img({spec.channels, spec.height, spec.width});
    for (std::size_t c = 0; c < spec.channels; ++c)
      for (std::size_t y = 0; y < spec.height; ++y)
        for (std::size_t x = 0; x < spec.width; ++x) {
          const bool in_patch = y >= box.y0 && y < box.y1 && x >= box.x0 && x < box.x1;
          double v = spec.background + (in_patch ? spec.separation : 0.0);
          if (spec.noise > 0.0) v += spec.noise * rng.normal();
          img.at({c, y, x}) = std::clamp(v, 0.0, 1.0);
        }
    ds.add(Sample{i, std::move(img), label, LabelKind::True});
  }
  return ds;
}

}  // namespace pseudolab
