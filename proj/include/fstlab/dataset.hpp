#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "fstlab/errors.hpp"
#include "fstlab/model.hpp"
#include "fstlab/rng.hpp"
#include "fstlab/tensor.hpp"

namespace fstlab {

// Images [N, H, W, C] with pixels in [0, 1]; labels in [0, K).
struct ImageDataset {
  Tensor images;
  std::vector<Label> labels;
  std::string name;
  std::size_t class_count = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t height() const { return images.dim(1); }
  std::size_t width() const { return images.dim(2); }
  std::size_t channels() const { return images.dim(3); }
  std::size_t pixels_per_image() const { return height() * width() * channels(); }
  Shape sample_shape() const { return {height(), width(), channels()}; }

  std::span<const double> image(std::size_t i) const {
    const std::size_t n = pixels_per_image();
    return {images.data() + i * n, n};
  }
  std::span<double> image(std::size_t i) {
    const std::size_t n = pixels_per_image();
    return {images.data() + i * n, n};
  }

  // Throws InputError unless every pixel is in [0,1] and every label in [0,K).
  void validate() const {
    if (images.rank() != 4 || images.dim(0) != labels.size()) {
      throw InputError("dataset.shape", name + ": images " + shape_string(images.shape()) +
                                            " vs " + std::to_string(labels.size()) + " labels");
    }
    for (double v : images.values()) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw InputError("dataset.pixel", name + ": pixel outside [0,1]");
      }
    }
    for (Label y : labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= class_count) {
        throw InputError("dataset.label", name + ": label " + std::to_string(y) +
                                              " outside [0," + std::to_string(class_count) + ")");
      }
    }
  }

  ImageDataset subset(std::span<const std::size_t> indices, std::string new_name = {}) const {
    ImageDataset out;
    out.name = new_name.empty() ? name : std::move(new_name);
    out.class_count = class_count;
    const std::size_t n = pixels_per_image();
    out.images = Tensor({indices.size(), height(), width(), channels()});
    out.labels.reserve(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const auto src = image(indices[i]);
      std::copy(src.begin(), src.end(), out.images.data() + i * n);
      out.labels.push_back(labels[indices[i]]);
    }
    return out;
  }

  std::vector<std::size_t> indices_of_class(Label c) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == c) out.push_back(i);
    }
    return out;
  }
};

// Gathers rows [begin, end) of `order` into a batch tensor plus labels.
inline std::pair<Tensor, std::vector<Label>> gather_batch(const ImageDataset& data,
                                                          std::span<const std::size_t> order) {
  const std::size_t n = data.pixels_per_image();
  Tensor batch({order.size(), data.height(), data.width(), data.channels()});
  std::vector<Label> labels;
  labels.reserve(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto src = data.image(order[i]);
    std::copy(src.begin(), src.end(), batch.data() + i * n);
    labels.push_back(data.labels[order[i]]);
  }
  return {std::move(batch), std::move(labels)};
}

struct SyntheticSpec {
  std::size_t classes = 10;
  std::size_t per_class = 500;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t channels = 1;
  double noise_sigma = 0.15;
  std::size_t grid = 4;  // coarse control grid for the smooth templates
  double contrast = 1.0;  // template = 0.5 + contrast * (smooth - 0.5)
};

// One smooth pattern per class: a coarse uniform grid, bilinearly
// upsampled to HxW so neighbouring pixels are correlated.
inline std::vector<Tensor> synthetic_templates(const SyntheticSpec& spec, Rng& rng) {
  std::vector<Tensor> out;
  const std::size_t g = std::max<std::size_t>(spec.grid, 2);
  for (std::size_t k = 0; k < spec.classes; ++k) {
    Tensor coarse({g, g, spec.channels});
    for (double& v : coarse.values()) v = 0.5 + spec.contrast * (rng.uniform() - 0.5);
    Tensor t({spec.height, spec.width, spec.channels});
    for (std::size_t r = 0; r < spec.height; ++r) {
      const double fr = static_cast<double>(r) * static_cast<double>(g - 1) /
                        static_cast<double>(spec.height - 1);
      const std::size_t r0 = std::min<std::size_t>(static_cast<std::size_t>(fr), g - 2);
      const double ar = fr - static_cast<double>(r0);
      for (std::size_t c = 0; c < spec.width; ++c) {
        const double fc = static_cast<double>(c) * static_cast<double>(g - 1) /
                          static_cast<double>(spec.width - 1);
        const std::size_t c0 = std::min<std::size_t>(static_cast<std::size_t>(fc), g - 2);
        const double ac = fc - static_cast<double>(c0);
        for (std::size_t ch = 0; ch < spec.channels; ++ch) {
          auto at = [&](std::size_t rr, std::size_t cc) {
            return coarse[(rr * g + cc) * spec.channels + ch];
          };
          t[(r * spec.width + c) * spec.channels + ch] =
              (1 - ar) * ((1 - ac) * at(r0, c0) + ac * at(r0, c0 + 1)) +
              ar * ((1 - ac) * at(r0 + 1, c0) + ac * at(r0 + 1, c0 + 1));
        }
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

// Balanced dataset: class c = template_c + N(0, sigma^2) noise, clamped to
// [0,1]. Samples are interleaved by class (0,1,...,K-1,0,1,...).
inline ImageDataset gen_synthetic(const SyntheticSpec& spec, const std::vector<Tensor>& templates,
                                  Rng& rng, std::string name = "synthetic") {
  if (spec.classes < 2) throw InputError("synthetic.classes", "need at least 2 classes");
  if (spec.height < 8 || spec.width < 8) {
    throw InputError("synthetic.size", "images must be at least 8x8");
  }
  if (templates.size() != spec.classes) {
    throw InputError("synthetic.templates", "one template per class required");
  }
  ImageDataset d;
  d.name = std::move(name);
  d.class_count = spec.classes;
  const std::size_t n = spec.classes * spec.per_class;
  const std::size_t px = spec.height * spec.width * spec.channels;
  d.images = Tensor({n, spec.height, spec.width, spec.channels});
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % spec.classes;
    d.labels[i] = static_cast<Label>(c);
    double* dst = d.images.data() + i * px;
    for (std::size_t p = 0; p < px; ++p) {
      const double v = templates[c][p] + spec.noise_sigma * rng.normal();
      dst[p] = std::clamp(v, 0.0, 1.0);
    }
  }
  return d;
}

inline ImageDataset gen_synthetic(const SyntheticSpec& spec, Rng& rng,
                                  std::string name = "synthetic") {
  const auto templates = synthetic_templates(spec, rng);
  return gen_synthetic(spec, templates, rng, std::move(name));
}

// ---------------------------------------------------------------------------
// IDX (MNIST-style) files: big-endian magic and dimension sizes, unsigned
// byte payload. Images use magic 0x00000803 (N, rows, cols); labels use
// 0x00000801 (N).

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path, "cannot open");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t off,
                               const std::string& path) {
  if (off + 4 > buf.size()) {
    throw ParseError("idx.truncated", path + ": truncated header");
  }
  return (std::uint32_t{buf[off]} << 24) | (std::uint32_t{buf[off + 1]} << 16) |
         (std::uint32_t{buf[off + 2]} << 8) | std::uint32_t{buf[off + 3]};
}

inline void put_be32(std::ofstream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                              static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b.data(), 4);
}

}  // namespace detail

inline ImageDataset load_idx(const std::string& images_path, const std::string& labels_path,
                             std::size_t class_count = 10) {
  const auto img = detail::read_file(images_path);
  const auto lab = detail::read_file(labels_path);

  if (detail::read_be32(img, 0, images_path) != kIdxImagesMagic) {
    throw ParseError("idx.bad_magic", images_path + ": not an IDX image file (magic != 0x00000803)");
  }
  if (detail::read_be32(lab, 0, labels_path) != kIdxLabelsMagic) {
    throw ParseError("idx.bad_magic", labels_path + ": not an IDX label file (magic != 0x00000801)");
  }
  const std::size_t n = detail::read_be32(img, 4, images_path);
  const std::size_t rows = detail::read_be32(img, 8, images_path);
  const std::size_t cols = detail::read_be32(img, 12, images_path);
  const std::size_t nl = detail::read_be32(lab, 4, labels_path);
  if (img.size() < 16 + n * rows * cols) {
    throw ParseError("idx.truncated", images_path + ": expected " +
                                          std::to_string(n * rows * cols) + " pixel bytes, found " +
                                          std::to_string(img.size() - 16));
  }
  if (lab.size() < 8 + nl) {
    throw ParseError("idx.truncated", labels_path + ": expected " + std::to_string(nl) +
                                          " label bytes, found " + std::to_string(lab.size() - 8));
  }
  if (n != nl) {
    throw ParseError("idx.count_mismatch", std::to_string(n) + " images vs " +
                                               std::to_string(nl) + " labels");
  }
  ImageDataset d;
  d.name = images_path;
  d.class_count = class_count;
  d.images = Tensor({n, rows, cols, 1});
  for (std::size_t i = 0; i < n * rows * cols; ++i) {
    d.images[i] = static_cast<double>(img[16 + i]) / 255.0;
  }
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = static_cast<Label>(lab[8 + i]);
    if (static_cast<std::size_t>(d.labels[i]) >= class_count) {
      throw ParseError("idx.label_range", labels_path + ": label " +
                                              std::to_string(d.labels[i]) + " >= " +
                                              std::to_string(class_count));
    }
  }
  return d;
}

// Single-channel datasets only; pixels are quantized as round(255 * v).
inline void write_idx(const ImageDataset& d, const std::string& images_path,
                      const std::string& labels_path) {
  if (d.channels() != 1) {
    throw InputError("idx.channels", "IDX export supports single-channel images only");
  }
  std::ofstream img(images_path, std::ios::binary);
  if (!img) throw IoError(images_path, "cannot open for writing");
  detail::put_be32(img, kIdxImagesMagic);
  detail::put_be32(img, static_cast<std::uint32_t>(d.size()));
  detail::put_be32(img, static_cast<std::uint32_t>(d.height()));
  detail::put_be32(img, static_cast<std::uint32_t>(d.width()));
  for (double v : d.images.values()) {
    img.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  }
  std::ofstream lab(labels_path, std::ios::binary);
  if (!lab) throw IoError(labels_path, "cannot open for writing");
  detail::put_be32(lab, kIdxLabelsMagic);
  detail::put_be32(lab, static_cast<std::uint32_t>(d.size()));
  for (Label y : d.labels) lab.put(static_cast<char>(static_cast<unsigned char>(y)));
  if (!img || !lab) throw IoError(images_path, "write failed");
}

}  // namespace fstlab
