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

#ifndef ABP_DATA_HPP
#define ABP_DATA_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "abp/tensor.hpp"

namespace abp {

/// Per-channel normalization applied to [0,1]-scaled pixel bytes.
struct Normalization {
    std::array<float, 3> mean{0.0f, 0.0f, 0.0f};
    std::array<float, 3> stddev{1.0f, 1.0f, 1.0f};

    static Normalization cifar10();
};

/// One image as raw bytes in channel-major (R plane, G plane, B plane) order.
struct LabeledImage {
    int label = 0;
    std::vector<std::uint8_t> pixels;

    bool operator==(const LabeledImage&) const = default;
};

/// Immutable set of equally-sized 3-channel images. Pixels stay as bytes;
/// normalization is applied when tensors are materialized.
struct Dataset {
    int num_classes = 10;
    int image_size = 32;
    std::vector<LabeledImage> records;
    Normalization norm = Normalization::cifar10();

    std::size_t size() const noexcept { return records.size(); }
    bool empty() const noexcept { return records.empty(); }
    int channels() const noexcept { return 3; }

    /// Normalized float value of one pixel byte.
    float normalized(int channel, std::uint8_t byte) const {
        return (static_cast<float>(byte) / 255.0f - norm.mean[channel]) / norm.stddev[channel];
    }

    Tensor images(std::span<const int> indices) const;
    Tensor all_images() const;
    std::vector<int> labels(std::span<const int> indices) const;
    std::vector<int> all_labels() const;
};

/// Per-channel mean and standard deviation of the dataset's bytes.
Normalization compute_normalization(const Dataset& data);

struct CifarOptions {
    int num_classes = 10;
    /// 1 for CIFAR-10 records; 2 for CIFAR-100 (coarse label skipped,
    /// fine label used).
    int label_bytes = 1;
    int image_size = 32;
    /// Use dataset statistics instead of the canonical CIFAR-10 constants.
    bool compute_normalization = false;
};

std::size_t cifar_record_size(const CifarOptions& opts);

/// Parses records in file order. Throws ParseError carrying the byte
/// offset of a truncated record or an out-of-range label.
Dataset parse_cifar_binary(std::span<const std::uint8_t> bytes, const CifarOptions& opts = {});
Dataset load_cifar_binary(const std::filesystem::path& path, const CifarOptions& opts = {});
/// Writes records in the CIFAR byte layout (label_bytes = 1 or 2).
void write_cifar_binary(const Dataset& data, const std::filesystem::path& path,
                        int label_bytes = 1);
std::vector<std::uint8_t> encode_cifar_binary(const Dataset& data, int label_bytes = 1);

struct SyntheticSpec {
    int num_classes = 4;
    int samples_per_class = 64;
    int image_size = 16;
    std::uint64_t seed = 0;
    float blob_separation = 10.0f;
    /// Class centers depend on `seed` only; the noise also depends on the
    /// split, so split 0 (train) and split 1 (test) share classes.
    int split = 0;
};

/// Gaussian class blobs: each class has a random center over
/// (channel, image quadrant) cells whose norm is blob_separation noise
/// units; every pixel adds unit Gaussian noise. Deterministic per seed.
Dataset synthetic_generate(const SyntheticSpec& spec);

/// Mixes values into one well-distributed 64-bit seed.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

/// Index batches for one epoch: a permutation that is a pure function of
/// (seed, epoch), cut into batch_size chunks with the short tail kept.
std::vector<std::vector<int>> batches(std::size_t dataset_size, int batch_size,
                                      std::uint64_t seed, int epoch);

struct Augmentation {
    bool crop = false;
    bool flip = false;
    int pad = 4;
};

/// Normalized batch with random crop (zero padded) and horizontal flip.
/// Randomness is drawn from `seed` only.
Tensor augmented_images(const Dataset& data, std::span<const int> indices,
                        const Augmentation& aug, std::uint64_t seed);

}  // namespace abp

#endif  // ABP_DATA_HPP
