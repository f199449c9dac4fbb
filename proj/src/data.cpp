// Copyright 2026 The ABP Authors
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

#include "abp/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

#include "abp/errors.hpp"

namespace abp {

Normalization Normalization::cifar10() {
    return {{0.4914f, 0.4822f, 0.4465f}, {0.2470f, 0.2435f, 0.2616f}};
}

Tensor Dataset::images(std::span<const int> indices) const {
    Tensor out(static_cast<int>(indices.size()), 3, image_size, image_size);
    const std::size_t plane = static_cast<std::size_t>(image_size) * image_size;
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const auto& px = records.at(indices[k]).pixels;
        auto dst = out.instance(static_cast<int>(k));
        for (int c = 0; c < 3; ++c) {
            for (std::size_t j = 0; j < plane; ++j) {
                dst[c * plane + j] = normalized(c, px[c * plane + j]);
            }
        }
    }
    return out;
}

Tensor Dataset::all_images() const {
    std::vector<int> idx(records.size());
    std::iota(idx.begin(), idx.end(), 0);
    return images(idx);
}

std::vector<int> Dataset::labels(std::span<const int> indices) const {
    std::vector<int> out;
    out.reserve(indices.size());
    for (int i : indices) out.push_back(records.at(i).label);
    return out;
}

std::vector<int> Dataset::all_labels() const {
    std::vector<int> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(r.label);
    return out;
}

Normalization compute_normalization(const Dataset& data) {
    Normalization n;
    if (data.empty()) return n;
    const std::size_t plane = static_cast<std::size_t>(data.image_size) * data.image_size;
    for (int c = 0; c < 3; ++c) {
        double sum = 0.0;
        double sq = 0.0;
        for (const auto& r : data.records) {
            for (std::size_t j = 0; j < plane; ++j) {
                const double v = r.pixels[c * plane + j] / 255.0;
                sum += v;
                sq += v * v;
            }
        }
        const double count = static_cast<double>(plane * data.size());
        const double mean = sum / count;
        const double var = std::max(sq / count - mean * mean, 1e-12);
        n.mean[c] = static_cast<float>(mean);
        n.stddev[c] = static_cast<float>(std::sqrt(var));
    }
    return n;
}

// ---------------------------------------------------------------------------
// CIFAR binary

std::size_t cifar_record_size(const CifarOptions& opts) {
    return static_cast<std::size_t>(opts.label_bytes) + 3u * opts.image_size * opts.image_size;
}

Dataset parse_cifar_binary(std::span<const std::uint8_t> bytes, const CifarOptions& opts) {
    if (opts.label_bytes != 1 && opts.label_bytes != 2) {
        throw ConfigError("label_bytes must be 1 or 2");
    }
    Dataset data;
    data.num_classes = opts.num_classes;
    data.image_size = opts.image_size;
    const std::size_t record = cifar_record_size(opts);
    const std::size_t pixels = record - opts.label_bytes;
    for (std::size_t off = 0; off < bytes.size(); off += record) {
        if (bytes.size() - off < record) {
            throw ParseError("truncated record: " + std::to_string(bytes.size() - off) + " of " +
                                 std::to_string(record) + " bytes",
                             off);
        }
        LabeledImage img;
        img.label = bytes[off + opts.label_bytes - 1];
        if (img.label >= opts.num_classes) {
            throw ParseError("label " + std::to_string(img.label) + " >= num_classes " +
                                 std::to_string(opts.num_classes),
                             off);
        }
        const auto* first = bytes.data() + off + opts.label_bytes;
        img.pixels.assign(first, first + pixels);
        data.records.push_back(std::move(img));
    }
    data.norm = opts.compute_normalization ? compute_normalization(data) : Normalization::cifar10();
    return data;
}

Dataset load_cifar_binary(const std::filesystem::path& path, const CifarOptions& opts) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open dataset file " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return parse_cifar_binary(bytes, opts);
}

std::vector<std::uint8_t> encode_cifar_binary(const Dataset& data, int label_bytes) {
    std::vector<std::uint8_t> out;
    for (const auto& r : data.records) {
        if (label_bytes == 2) out.push_back(0);
        out.push_back(static_cast<std::uint8_t>(r.label));
        out.insert(out.end(), r.pixels.begin(), r.pixels.end());
    }
    return out;
}

void write_cifar_binary(const Dataset& data, const std::filesystem::path& path, int label_bytes) {
    const auto bytes = encode_cifar_binary(data, label_bytes);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write dataset file " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

// ---------------------------------------------------------------------------
// Synthetic data

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    // splitmix64 finalizer over a combined word
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Dataset synthetic_generate(const SyntheticSpec& spec) {
    if (spec.num_classes < 1 || spec.samples_per_class < 0 || spec.image_size < 2) {
        throw ConfigError("invalid synthetic dataset spec");
    }
    constexpr int kCells = 3 * 4;  // channel x quadrant
    constexpr float kByteScale = 12.0f;
    std::mt19937_64 rng(mix_seed(spec.seed, 0x5eedULL));
    std::normal_distribution<float> normal(0.0f, 1.0f);

    std::vector<std::array<float, kCells>> centers(spec.num_classes);
    for (auto& c : centers) {
        float norm = 0.0f;
        for (auto& v : c) {
            v = normal(rng);
            norm += v * v;
        }
        norm = std::sqrt(std::max(norm, 1e-12f));
        for (auto& v : c) v *= spec.blob_separation / norm;
    }

    rng.seed(mix_seed(spec.seed, 1 + static_cast<std::uint64_t>(spec.split)));
    Dataset data;
    data.num_classes = spec.num_classes;
    data.image_size = spec.image_size;
    const int s = spec.image_size;
    const int half = s / 2;
    for (int k = 0; k < spec.samples_per_class; ++k) {
        for (int label = 0; label < spec.num_classes; ++label) {
            LabeledImage img;
            img.label = label;
            img.pixels.resize(3u * s * s);
            for (int c = 0; c < 3; ++c) {
                for (int y = 0; y < s; ++y) {
                    for (int x = 0; x < s; ++x) {
                        const int quadrant = (y >= half ? 2 : 0) + (x >= half ? 1 : 0);
                        const float v = centers[label][c * 4 + quadrant] + normal(rng);
                        const float byte = std::clamp(std::round(127.5f + kByteScale * v), 0.0f,
                                                      255.0f);
                        img.pixels[(c * s + y) * s + x] = static_cast<std::uint8_t>(byte);
                    }
                }
            }
            data.records.push_back(std::move(img));
        }
    }
    data.norm = compute_normalization(data);
    return data;
}

// ---------------------------------------------------------------------------
// Batching

std::vector<std::vector<int>> batches(std::size_t dataset_size, int batch_size,
                                      std::uint64_t seed, int epoch) {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    std::vector<int> order(dataset_size);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<int>> out;
    for (std::size_t first = 0; first < order.size(); first += batch_size) {
        const std::size_t last = std::min(order.size(), first + batch_size);
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(first),
                         order.begin() + static_cast<std::ptrdiff_t>(last));
    }
    return out;
}

Tensor augmented_images(const Dataset& data, std::span<const int> indices,
                        const Augmentation& aug, std::uint64_t seed) {
    Tensor base = data.images(indices);
    if (!aug.crop && !aug.flip) return base;
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> shift(-aug.pad, aug.pad);
    std::bernoulli_distribution coin(0.5);
    const int s = data.image_size;
    Tensor out(base.n(), base.c(), s, s);
    for (int i = 0; i < base.n(); ++i) {
        const int dy = aug.crop ? shift(rng) : 0;
        const int dx = aug.crop ? shift(rng) : 0;
        const bool flip = aug.flip && coin(rng);
        for (int c = 0; c < base.c(); ++c) {
            for (int y = 0; y < s; ++y) {
                for (int x = 0; x < s; ++x) {
                    const int sy = y + dy;
                    const int sx0 = x + dx;
                    const int sx = flip ? s - 1 - sx0 : sx0;
                    const bool inside = sy >= 0 && sy < s && sx0 >= 0 && sx0 < s;
                    out.at(i, c, y, x) = inside ? base.at(i, c, sy, sx) : 0.0f;
                }
            }
        }
    }
    return out;
}

}  // namespace abp
