#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ihd/labels.hpp"
#include "ihd/preprocess.hpp"

namespace ihd {

struct SynthSpec {
    std::uint64_t seed = 0;
    std::size_t num_series = 8;
    std::size_t min_slices = 6;
    std::size_t max_slices = 10;
    std::size_t frame = 64;          // >= 32
    double signal_strength = 130.0;  // HU offset of planted blobs, > 0
    double label_noise = 0.0;        // subtype flip rate in [0,1)
    // per-subtype presence rate (EDH, IPH, IVH, SAH, SDH)
    std::array<double, 5> class_rates = {0.3, 0.3, 0.3, 0.3, 0.3};

    void validate() const;
};

struct GeneratedSeries {
    HUVolume volume;
    std::vector<LabelVector> labels;  // one per slice, stacking order
};

std::string series_name(std::size_t index);

// Fully determined by (spec.seed, series_index).
GeneratedSeries generate_series(const SynthSpec& spec, std::size_t series_index);

struct DatasetPaths {
    std::string manifest;        // public manifest (unlabeled rows blank)
    std::string hidden_answers;  // every row labeled, for evaluation only
    std::string volumes_dir;
    std::array<std::size_t, 3> split_counts{0, 0, 0};  // train, validation, unlabeled series
};

// fractions: train, validation, unlabeled; must sum to 1.
DatasetPaths generate_dataset(const SynthSpec& spec, const std::array<double, 3>& fractions,
                              const std::string& out_dir);

// Split series counts by the largest-remainder rule (exact when fractions are).
std::array<std::size_t, 3> split_counts(std::size_t n, const std::array<double, 3>& fractions);

}  // namespace ihd
