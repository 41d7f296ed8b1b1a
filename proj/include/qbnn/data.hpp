// Copyright 2026 The qbnn Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "qbnn/rng.hpp"
#include "qbnn/tensor.hpp"
#include "qbnn/train.hpp"

namespace qbnn {

// ---------------------------------------------------------------------------
// Regression datasets. Features and training targets are z-scored with
// training-split statistics; evaluation targets stay in original units and
// predictions are mapped back before metrics.
// ---------------------------------------------------------------------------

struct RegressionDataset {
  Tensor x_train, y_train;  // standardised
  Tensor x_val, y_val;      // standardised
  Tensor x_test;            // standardised features
  Tensor y_test;            // original units
  Tensor y_test_clean;      // original units, noise omitted (synthetic only)
  double y_mean = 0.0, y_std = 1.0;
  std::vector<double> x_mean, x_std;
};

namespace detail {

struct Standardizer {
  std::vector<double> mean, std;

  static Standardizer fit(const Tensor& t) {
    Standardizer s;
    const std::size_t n = t.rows(), d = t.cols();
    s.mean.assign(d, 0.0);
    s.std.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) s.mean[j] += t(i, j);
    for (auto& m : s.mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const double dv = t(i, j) - s.mean[j];
        s.std[j] += dv * dv;
      }
    for (auto& v : s.std) {
      v = std::sqrt(v / static_cast<double>(n));
      if (v == 0.0) v = 1.0;
    }
    return s;
  }

  Tensor apply(const Tensor& t) const {
    Tensor out = t;
    for (std::size_t i = 0; i < t.rows(); ++i)
      for (std::size_t j = 0; j < t.cols(); ++j)
        out(i, j) = static_cast<float>((t(i, j) - mean[j]) / std[j]);
    return out;
  }
};

}  // namespace detail

/// Synthetic benchmark: x ~ U(-2, 2), y = 2x + 8 + eps with eps ~ N(0, 1).
/// The test split carries both noisy targets and the noiseless ones.
inline RegressionDataset synth_regression(SeededRng& rng, std::size_t n_train,
                                          std::size_t n_val = 0,
                                          std::size_t n_test = 0) {
  if (n_train < 1) throw std::invalid_argument("synth_regression: n_train >= 1");
  auto draw = [&rng](std::size_t n, Tensor& x, Tensor& y, Tensor* clean) {
    x = Tensor({n, 1});
    y = Tensor({n, 1});
    if (clean) *clean = Tensor({n, 1});
    for (std::size_t i = 0; i < n; ++i) {
      const double xi = -2.0 + 4.0 * rng.next_double();
      const double mean = 2.0 * xi + 8.0;
      x(i, 0) = static_cast<float>(xi);
      y(i, 0) = static_cast<float>(mean + rng.next_gaussian());
      if (clean) (*clean)(i, 0) = static_cast<float>(mean);
    }
  };
  RegressionDataset ds;
  Tensor xtr, ytr, xva, yva, xte, yte;
  draw(n_train, xtr, ytr, nullptr);
  if (n_val > 0) draw(n_val, xva, yva, nullptr);
  if (n_test > 0) draw(n_test, xte, yte, &ds.y_test_clean);

  detail::Standardizer xs = detail::Standardizer::fit(xtr);
  detail::Standardizer ys = detail::Standardizer::fit(ytr);
  ds.x_train = xs.apply(xtr);
  ds.y_train = ys.apply(ytr);
  if (n_val > 0) {
    ds.x_val = xs.apply(xva);
    ds.y_val = ys.apply(yva);
  }
  if (n_test > 0) {
    ds.x_test = xs.apply(xte);
    ds.y_test = yte;
  }
  ds.x_mean = xs.mean;
  ds.x_std = xs.std;
  ds.y_mean = ys.mean[0];
  ds.y_std = ys.std[0];
  return ds;
}

/// Maps standardised predictions back to original target units.
template <typename T>
TensorT<T> unstandardise_mean(const TensorT<T>& mean, double y_mean, double y_std) {
  TensorT<T> out = mean;
  for (auto& v : out.data())
    v = static_cast<T>(static_cast<double>(v) * y_std + y_mean);
  return out;
}

template <typename T>
TensorT<T> unstandardise_variance(const TensorT<T>& var, double y_std) {
  TensorT<T> out = var;
  for (auto& v : out.data())
    v = static_cast<T>(static_cast<double>(v) * y_std * y_std);
  return out;
}

struct SplitFractions {
  double train = 0.8, val = 0.1, test = 0.1;
};

/// Numeric CSV, last column is the target. Deterministic shuffle-split by
/// seed, then z-scoring from the training split only.
inline RegressionDataset load_csv_regression(const std::string& path,
                                             const SplitFractions& fractions,
                                             std::uint64_t seed) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv_regression: cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(ss, cell, ',')) {
      ++col;
      try {
        std::size_t used = 0;
        const double v = std::stod(cell, &used);
        while (used < cell.size() &&
               (cell[used] == ' ' || cell[used] == '\r' || cell[used] == '\t'))
          ++used;
        if (used != cell.size()) throw std::invalid_argument(cell);
        row.push_back(v);
      } catch (const std::exception&) {
        throw std::runtime_error("load_csv_regression: non-numeric cell at row " +
                                 std::to_string(line_no) + ", column " +
                                 std::to_string(col));
      }
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw std::runtime_error("load_csv_regression: ragged row " +
                               std::to_string(line_no));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty() || rows.front().size() < 2) {
    throw std::runtime_error("load_csv_regression: need rows with >= 2 columns");
  }
  const std::size_t n = rows.size(), d = rows.front().size() - 1;
  SeededRng rng(seed);
  std::vector<std::size_t> order = permutation(rng, n);
  const std::size_t n_train = static_cast<std::size_t>(fractions.train * n);
  const std::size_t n_val = static_cast<std::size_t>(fractions.val * n);
  if (n_train == 0 || n_train + n_val >= n) {
    throw std::invalid_argument("load_csv_regression: bad split fractions");
  }
  auto gather = [&](std::size_t begin, std::size_t end, Tensor& x, Tensor& y) {
    x = Tensor({end - begin, d});
    y = Tensor({end - begin, 1});
    for (std::size_t i = begin; i < end; ++i) {
      const auto& row = rows[order[i]];
      for (std::size_t j = 0; j < d; ++j)
        x(i - begin, j) = static_cast<float>(row[j]);
      y(i - begin, 0) = static_cast<float>(row[d]);
    }
  };
  Tensor xtr, ytr, xva, yva, xte, yte;
  gather(0, n_train, xtr, ytr);
  gather(n_train, n_train + n_val, xva, yva);
  gather(n_train + n_val, n, xte, yte);

  RegressionDataset ds;
  detail::Standardizer xs = detail::Standardizer::fit(xtr);
  detail::Standardizer ys = detail::Standardizer::fit(ytr);
  ds.x_train = xs.apply(xtr);
  ds.y_train = ys.apply(ytr);
  ds.x_val = xs.apply(xva);
  ds.y_val = ys.apply(yva);
  ds.x_test = xs.apply(xte);
  ds.y_test = yte;
  ds.x_mean = xs.mean;
  ds.x_std = xs.std;
  ds.y_mean = ys.mean[0];
  ds.y_std = ys.std[0];
  return ds;
}

// ---------------------------------------------------------------------------
// IDX image format (the MNIST container): big-endian magic and dimensions,
// unsigned-byte payload.
// ---------------------------------------------------------------------------

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

struct ImageSet {
  Tensor x;  // {N, H*W} scaled to [0, 1]
  Tensor one_hot;  // {N, 10}
  std::vector<std::size_t> labels;
  std::size_t height = 0, width = 0;
  std::size_t num_classes = 10;
};

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const char* what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw std::runtime_error(std::string("idx: truncated ") + what);
  }
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

inline void write_be32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

inline ImageSet load_idx_images(const std::string& images_path,
                                const std::string& labels_path) {
  std::ifstream imgs(images_path, std::ios::binary);
  if (!imgs) throw std::runtime_error("idx: cannot open " + images_path);
  if (detail::read_be32(imgs, "image magic") != kIdxImagesMagic) {
    throw std::runtime_error("idx: bad image magic in " + images_path);
  }
  const std::uint32_t n = detail::read_be32(imgs, "image count");
  const std::uint32_t h = detail::read_be32(imgs, "image height");
  const std::uint32_t w = detail::read_be32(imgs, "image width");
  std::vector<unsigned char> pixels(static_cast<std::size_t>(n) * h * w);
  if (!imgs.read(reinterpret_cast<char*>(pixels.data()),
                 static_cast<std::streamsize>(pixels.size()))) {
    throw std::runtime_error("idx: truncated image payload in " + images_path);
  }

  std::ifstream labs(labels_path, std::ios::binary);
  if (!labs) throw std::runtime_error("idx: cannot open " + labels_path);
  if (detail::read_be32(labs, "label magic") != kIdxLabelsMagic) {
    throw std::runtime_error("idx: bad label magic in " + labels_path);
  }
  const std::uint32_t nl = detail::read_be32(labs, "label count");
  if (nl != n) throw std::runtime_error("idx: image/label count mismatch");
  std::vector<unsigned char> labels(nl);
  if (!labs.read(reinterpret_cast<char*>(labels.data()),
                 static_cast<std::streamsize>(labels.size()))) {
    throw std::runtime_error("idx: truncated label payload in " + labels_path);
  }

  ImageSet set;
  set.height = h;
  set.width = w;
  set.x = Tensor({n, static_cast<std::size_t>(h) * w});
  for (std::size_t i = 0; i < set.x.size(); ++i)
    set.x[i] = static_cast<float>(pixels[i]) / 255.0f;
  set.one_hot = Tensor({n, set.num_classes});
  set.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= set.num_classes) {
      throw std::runtime_error("idx: label out of range");
    }
    set.labels[i] = labels[i];
    set.one_hot(i, labels[i]) = 1.0f;
  }
  return set;
}

inline void write_idx_images(const std::string& path,
                             const std::vector<unsigned char>& pixels,
                             std::size_t n, std::size_t h, std::size_t w) {
  if (pixels.size() != n * h * w) {
    throw std::invalid_argument("write_idx_images: payload size mismatch");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_idx_images: cannot open " + path);
  detail::write_be32(out, kIdxImagesMagic);
  detail::write_be32(out, static_cast<std::uint32_t>(n));
  detail::write_be32(out, static_cast<std::uint32_t>(h));
  detail::write_be32(out, static_cast<std::uint32_t>(w));
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
}

inline void write_idx_labels(const std::string& path,
                             const std::vector<unsigned char>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_idx_labels: cannot open " + path);
  detail::write_be32(out, kIdxLabelsMagic);
  detail::write_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()),
            static_cast<std::streamsize>(labels.size()));
}

struct ClassificationDataset {
  Tensor x_train, y_train;  // one-hot training targets
  std::vector<std::size_t> labels_train;
  Tensor x_test;
  std::vector<std::size_t> labels_test;
  std::size_t height = 0, width = 0;
  std::size_t num_classes = 10;
};

/// Deterministic shuffle-split of an image set.
inline ClassificationDataset split_images(const ImageSet& set,
                                          std::size_t n_train,
                                          std::uint64_t seed) {
  const std::size_t n = set.x.rows();
  if (n_train == 0 || n_train >= n) {
    throw std::invalid_argument("split_images: bad n_train");
  }
  SeededRng rng(seed);
  std::vector<std::size_t> order = permutation(rng, n);
  ClassificationDataset ds;
  ds.height = set.height;
  ds.width = set.width;
  ds.num_classes = set.num_classes;
  const std::size_t d = set.x.cols();
  ds.x_train = Tensor({n_train, d});
  ds.y_train = Tensor({n_train, set.num_classes});
  ds.labels_train.resize(n_train);
  ds.x_test = Tensor({n - n_train, d});
  ds.labels_test.resize(n - n_train);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t src = order[i];
    if (i < n_train) {
      for (std::size_t j = 0; j < d; ++j) ds.x_train(i, j) = set.x(src, j);
      ds.y_train(i, set.labels[src]) = 1.0f;
      ds.labels_train[i] = set.labels[src];
    } else {
      for (std::size_t j = 0; j < d; ++j)
        ds.x_test(i - n_train, j) = set.x(src, j);
      ds.labels_test[i - n_train] = set.labels[src];
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Augmentations for domain-shift evaluation.
// ---------------------------------------------------------------------------

enum class AugmentKind { Brightness, Rotation, HShift };

inline AugmentKind augment_kind_from_string(const std::string& s) {
  if (s == "brightness") return AugmentKind::Brightness;
  if (s == "rotation") return AugmentKind::Rotation;
  if (s == "hshift") return AugmentKind::HShift;
  throw std::invalid_argument("augment: unknown kind '" + s + "'");
}

/// brightness: multiply and clamp to [0, 1]. rotation: nearest-neighbour
/// resample about the image centre (strength in degrees), zero fill.
/// hshift: shift right by round(strength * width) pixels, zero fill.
inline Tensor augment(const Tensor& images, std::size_t h, std::size_t w,
                      AugmentKind kind, double strength) {
  if (images.rank() != 2 || images.cols() != h * w) {
    throw std::invalid_argument("augment: images must be {N, H*W}");
  }
  const std::size_t n = images.rows();
  Tensor out({n, h * w});
  switch (kind) {
    case AugmentKind::Brightness: {
      for (std::size_t i = 0; i < images.size(); ++i) {
        out[i] = static_cast<float>(
            std::clamp(static_cast<double>(images[i]) * strength, 0.0, 1.0));
      }
      break;
    }
    case AugmentKind::Rotation: {
      const double th = strength * std::numbers::pi / 180.0;
      const double cy = (static_cast<double>(h) - 1.0) / 2.0;
      const double cx = (static_cast<double>(w) - 1.0) / 2.0;
      const double c = std::cos(th), s = std::sin(th);
      for (std::size_t img = 0; img < n; ++img) {
        for (std::size_t i = 0; i < h; ++i) {
          for (std::size_t j = 0; j < w; ++j) {
            const double sy = cy + (i - cy) * c + (j - cx) * s;
            const double sx = cx - (i - cy) * s + (j - cx) * c;
            const long si = std::lround(sy), sj = std::lround(sx);
            float v = 0.0f;
            if (si >= 0 && si < static_cast<long>(h) && sj >= 0 &&
                sj < static_cast<long>(w)) {
              v = images(img, static_cast<std::size_t>(si) * w +
                                  static_cast<std::size_t>(sj));
            }
            out(img, i * w + j) = v;
          }
        }
      }
      break;
    }
    case AugmentKind::HShift: {
      const long shift = std::lround(strength * static_cast<double>(w));
      for (std::size_t img = 0; img < n; ++img) {
        for (std::size_t i = 0; i < h; ++i) {
          for (std::size_t j = 0; j < w; ++j) {
            const long sj = static_cast<long>(j) - shift;
            out(img, i * w + j) =
                (sj >= 0 && sj < static_cast<long>(w))
                    ? images(img, i * w + static_cast<std::size_t>(sj))
                    : 0.0f;
          }
        }
      }
      break;
    }
  }
  return out;
}

}  // namespace qbnn
