#pragma once

#include <array>
#include <cstddef>
#include <string>

namespace ihd {

// Canonical class order used for every 6-way vector in the pipeline.
inline constexpr std::size_t kNumClasses = 6;
inline constexpr std::size_t kAnyIndex = 5;

inline constexpr std::array<const char*, kNumClasses> kClassNames = {
    "epidural", "intraparenchymal", "intraventricular", "subarachnoid", "subdural", "any",
};
inline constexpr std::array<const char*, kNumClasses> kClassShortNames = {
    "edh", "iph", "ivh", "sah", "sdh", "any",
};

// Evaluation weights: 2 on "any", 1 on each subtype.
inline constexpr std::array<double, kNumClasses> kMetricWeights = {1.0, 1.0, 1.0, 1.0, 1.0, 2.0};

struct LabelVector {
    std::array<int, kNumClasses> flags{0, 0, 0, 0, 0, 0};

    int& operator[](std::size_t i) { return flags[i]; }
    int operator[](std::size_t i) const { return flags[i]; }

    bool any_subtype() const {
        for (std::size_t i = 0; i < kAnyIndex; ++i) {
            if (flags[i]) return true;
        }
        return false;
    }
    // Generator guarantee: the "any" flag agrees with the subtype OR.
    bool consistent() const { return (flags[kAnyIndex] != 0) == any_subtype(); }
    void sync_any() { flags[kAnyIndex] = any_subtype() ? 1 : 0; }

    bool operator==(const LabelVector& o) const { return flags == o.flags; }
};

enum class Split { train, validation, unlabeled };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::validation: return "validation";
        default: return "unlabeled";
    }
}

Split split_from_string(const std::string& s);

}  // namespace ihd
