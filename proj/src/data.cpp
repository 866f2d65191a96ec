#include "tist/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <set>
#include <unordered_map>

#include "tist/augment.hpp"
#include "tist/png_io.hpp"

namespace tist {

namespace fs = std::filesystem;

std::string to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

UnlabeledView::UnlabeledView(const Dataset& dataset, std::vector<std::size_t> indices)
    : dataset_(&dataset), indices_(std::move(indices)) {
  for (auto i : indices_)
    if (i >= dataset.size()) throw InvalidInput("UnlabeledView: index out of range");
}

UnlabeledView::UnlabeledView(const Dataset& dataset) : dataset_(&dataset), indices_(dataset.size()) {
  std::iota(indices_.begin(), indices_.end(), std::size_t{0});
}

const Image& UnlabeledView::image(std::size_t i) const { return (*dataset_)[indices_.at(i)].image; }

const std::string& UnlabeledView::id(std::size_t i) const { return (*dataset_)[indices_.at(i)].id; }

const LabelMap& UnlabeledView::label(std::size_t i) const {
  throw std::logic_error("target sample '" + id(i) + "' is unlabeled during training");
}

void validate(const SynthConfig& config) {
  if (config.num_source < 1 || config.num_target < 1)
    throw InvalidConfig("SynthConfig: sample counts must be positive");
  if (config.height < 8 || config.width < 8) throw InvalidConfig("SynthConfig: images must be at least 8x8");
  if (config.channels != 1 && config.channels != 3) throw InvalidConfig("SynthConfig: channels must be 1 or 3");
  if (config.num_classes < 2 || config.num_classes > 8) throw InvalidConfig("SynthConfig: num_classes must be 2..8");
  const auto& s = config.shift;
  if (!std::isfinite(s.brightness) || !(s.noise_sigma >= 0) || !(s.blur_sigma >= 0))
    throw InvalidConfig("SynthConfig: shift must be finite with non-negative noise and blur");
}

double ShapeSpec::area() const {
  if (kind == Kind::ellipse) return std::numbers::pi * semi_a * semi_b;
  double twice = 0.0;
  for (std::size_t i = 0; i < vertices.size(); ++i) {
    const auto& [y0, x0] = vertices[i];
    const auto& [y1, x1] = vertices[(i + 1) % vertices.size()];
    twice += x0 * y1 - x1 * y0;
  }
  return std::abs(twice) / 2.0;
}

ShapeSpec sample_shape(Rng& rng, int height, int width) {
  const double size = std::min(height, width);
  ShapeSpec shape;
  shape.kind = rng.bernoulli(0.5) ? ShapeSpec::Kind::ellipse : ShapeSpec::Kind::polygon;
  shape.center_y = rng.uniform(0.25, 0.75) * height;
  shape.center_x = rng.uniform(0.25, 0.75) * width;
  if (shape.kind == ShapeSpec::Kind::ellipse) {
    shape.semi_a = rng.uniform(0.1, 0.25) * size;
    shape.semi_b = rng.uniform(0.1, 0.25) * size;
    shape.angle = rng.uniform(0.0, std::numbers::pi);
  } else {
    const auto n = rng.uniform_int(5, 8);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (std::int64_t i = 0; i < n; ++i) {
      const double theta = phase + 2.0 * std::numbers::pi * (i + rng.uniform(-0.3, 0.3)) / n;
      const double r = rng.uniform(0.1, 0.25) * size;
      shape.vertices.emplace_back(shape.center_y + r * std::sin(theta), shape.center_x + r * std::cos(theta));
    }
  }
  return shape;
}

namespace {

bool inside(const ShapeSpec& shape, double y, double x) {
  if (shape.kind == ShapeSpec::Kind::ellipse) {
    const double dy = y - shape.center_y, dx = x - shape.center_x;
    const double c = std::cos(shape.angle), s = std::sin(shape.angle);
    const double u = (dx * c + dy * s) / shape.semi_a;
    const double v = (-dx * s + dy * c) / shape.semi_b;
    return u * u + v * v <= 1.0;
  }
  // Crossing number.
  bool in = false;
  const auto& vs = shape.vertices;
  for (std::size_t i = 0, j = vs.size() - 1; i < vs.size(); j = i++) {
    const auto& [yi, xi] = vs[i];
    const auto& [yj, xj] = vs[j];
    if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) in = !in;
  }
  return in;
}

// One clean rendering: shaded background, flat-coloured textured shapes.
std::pair<Image, LabelMap> render(Rng& rng, const SynthConfig& config) {
  const int h = config.height, w = config.width, channels = config.channels;
  Image image(channels, h, w);
  LabelMap labels(h, w, 0);

  std::vector<double> base(channels), fg_base(channels);
  for (auto& b : base) b = rng.uniform(0.2, 0.4);
  const double grad_angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double grad_amp = rng.uniform(0.0, 0.1);
  const double freq = rng.uniform(0.05, 0.15);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double t = ((y - h / 2.0) * std::sin(grad_angle) + (x - w / 2.0) * std::cos(grad_angle)) / std::max(h, w);
      const double texture = 0.03 * std::sin(freq * x + phase) * std::cos(freq * y);
      for (int c = 0; c < channels; ++c) image.at(c, y, x) = static_cast<float>(base[c] + grad_amp * t + texture);
    }
  }

  for (int cls = 1; cls < config.num_classes; ++cls) {
    const ShapeSpec shape = sample_shape(rng, h, w);
    for (auto& b : fg_base) b = rng.uniform(0.55, 0.8);
    const double shade = rng.uniform(-0.05, 0.05);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!inside(shape, y + 0.5, x + 0.5)) continue;
        labels.at(y, x) = cls;
        const double t = (y - shape.center_y) / h;
        for (int c = 0; c < channels; ++c) image.at(c, y, x) = static_cast<float>(fg_base[c] + shade * t);
      }
    }
  }
  for (auto& v : image.pixels) v = std::clamp(v, 0.0F, 1.0F);
  return {std::move(image), std::move(labels)};
}

std::string make_id(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%04d", prefix, i);
  return buf;
}

}  // namespace

std::size_t rasterize(const ShapeSpec& shape, LabelMap& labels, std::int32_t class_id) {
  std::size_t covered = 0;
  for (int y = 0; y < labels.height; ++y)
    for (int x = 0; x < labels.width; ++x)
      if (inside(shape, y + 0.5, x + 0.5)) {
        labels.at(y, x) = class_id;
        ++covered;
      }
  return covered;
}

Image apply_domain_shift(const Image& image, const DomainShift& shift, std::uint64_t noise_seed) {
  Image out = image;
  if (shift.brightness != 0.0)
    for (auto& v : out.pixels) v = static_cast<float>(v + shift.brightness);
  if (shift.blur_sigma > 0.0) out = gaussian_blur(out, shift.blur_sigma);
  if (shift.noise_sigma > 0.0) {
    Rng rng(noise_seed);
    for (auto& v : out.pixels) v = static_cast<float>(v + shift.noise_sigma * rng.normal());
  }
  for (auto& v : out.pixels) v = std::clamp(v, 0.0F, 1.0F);
  return out;
}

std::pair<Dataset, Dataset> generate_synthetic(const SynthConfig& config, std::uint64_t seed) {
  validate(config);
  Dataset source, target;
  source.reserve(config.num_source);
  target.reserve(config.num_target);
  for (int i = 0; i < config.num_source; ++i) {
    Rng rng(Rng::derive(seed, {1, static_cast<std::uint64_t>(i)}));
    auto [image, labels] = render(rng, config);
    source.push_back({make_id("src", i), std::move(image), std::move(labels), Domain::source});
  }
  for (int i = 0; i < config.num_target; ++i) {
    Rng rng(Rng::derive(seed, {2, static_cast<std::uint64_t>(i)}));
    auto [image, labels] = render(rng, config);
    Image shifted = apply_domain_shift(image, config.shift, Rng::derive(seed, {3, static_cast<std::uint64_t>(i)}));
    target.push_back({make_id("tgt", i), std::move(shifted), std::move(labels), Domain::target});
  }
  return {std::move(source), std::move(target)};
}

Dataset load_folder_dataset(const fs::path& root, const FolderLayout& layout) {
  const fs::path image_dir = root / layout.images_dir;
  const fs::path mask_dir = root / layout.masks_dir;
  if (!fs::is_directory(image_dir)) throw IoError("missing image directory " + image_dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(image_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.stem().string() < b.stem().string(); });

  Dataset dataset;
  dataset.reserve(files.size());
  for (const auto& file : files) {
    Sample sample;
    sample.id = file.stem().string();
    sample.domain = layout.domain;
    try {
      sample.image = read_png_image(file);
    } catch (const IoError& e) {
      throw IoError("sample '" + sample.id + "': " + e.what());
    }
    const fs::path mask_file = mask_dir / (sample.id + ".png");
    if (fs::exists(mask_file)) {
      try {
        sample.label = read_png_labels(mask_file);
      } catch (const IoError& e) {
        throw IoError("sample '" + sample.id + "': " + e.what());
      }
      if (sample.label->height != sample.image.height || sample.label->width != sample.image.width)
        throw InvalidInput("sample '" + sample.id + "': image " + file.string() + " and mask " + mask_file.string() +
                           " differ in size");
    }
    dataset.push_back(std::move(sample));
  }
  return dataset;
}

void export_folder_dataset(const Dataset& dataset, const fs::path& root, const FolderLayout& layout) {
  fs::create_directories(root / layout.images_dir);
  bool any_mask = false;
  for (const auto& s : dataset) any_mask = any_mask || s.label.has_value();
  if (any_mask) fs::create_directories(root / layout.masks_dir);
  for (const auto& s : dataset) {
    write_png_image(root / layout.images_dir / (s.id + ".png"), s.image);
    if (s.label) write_png_labels(root / layout.masks_dir / (s.id + ".png"), *s.label);
  }
}

std::vector<std::vector<std::size_t>> partition_indices(std::size_t n, int k, std::uint64_t seed) {
  if (k < 1) throw InvalidInput("partition_indices: k must be >= 1");
  if (n < static_cast<std::size_t>(k))
    throw InvalidInput("partition_indices: " + std::to_string(n) + " items cannot fill " + std::to_string(k) + " folds");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> groups(k);
  std::size_t pos = 0;
  for (int f = 0; f < k; ++f) {
    const std::size_t size = n / k + (static_cast<std::size_t>(f) < n % k ? 1 : 0);
    groups[f].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                     order.begin() + static_cast<std::ptrdiff_t>(pos + size));
    std::sort(groups[f].begin(), groups[f].end());
    pos += size;
  }
  return groups;
}

std::vector<FoldSplit> make_folds(const Dataset& source, const Dataset& target, int k, std::uint64_t seed) {
  const auto target_groups = partition_indices(target.size(), k, Rng::derive(seed, {0x7a}));
  const auto source_groups = partition_indices(source.size(), k, Rng::derive(seed, {0x5c}));
  std::vector<FoldSplit> folds(k);
  for (int f = 0; f < k; ++f) {
    FoldSplit& split = folds[f];
    split.fold_index = f;
    for (int g = 0; g < k; ++g) {
      for (auto i : target_groups[g]) (g == f ? split.test_ids : split.train_target_ids).push_back(target[i].id);
      for (auto i : source_groups[g]) (g == f ? split.source_test_ids : split.train_source_ids).push_back(source[i].id);
    }
    for (auto* ids : {&split.train_source_ids, &split.train_target_ids, &split.test_ids, &split.source_test_ids})
      std::sort(ids->begin(), ids->end());
  }
  return folds;
}

std::vector<std::size_t> indices_of(const Dataset& dataset, const std::vector<std::string>& ids) {
  std::unordered_map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < dataset.size(); ++i) position.emplace(dataset[i].id, i);
  std::vector<std::size_t> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = position.find(id);
    if (it == position.end()) throw InvalidInput("unknown sample id '" + id + "'");
    out.push_back(it->second);
  }
  return out;
}

CyclicSampler::CyclicSampler(std::size_t n, std::uint64_t seed, std::uint64_t stream)
    : n_(n), seed_(seed), stream_(stream) {
  if (n == 0) throw InvalidInput("CyclicSampler: empty pool");
}

std::size_t CyclicSampler::index_at(std::uint64_t position) const {
  const std::uint64_t cycle = position / n_;
  if (cycle != cached_cycle_) {
    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    Rng rng(Rng::derive(seed_, {stream_, cycle}));
    rng.shuffle(order_);
    cached_cycle_ = cycle;
  }
  return order_[position % n_];
}

}  // namespace tist
