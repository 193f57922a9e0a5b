#include "ihd/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>

#include "ihd/data.hpp"
#include "ihd/errors.hpp"
#include "ihd/rng.hpp"

namespace ihd {

void SynthSpec::validate() const {
    if (frame < 32) throw ValidationError("synth: frame must be >= 32");
    if (signal_strength <= 0.0) throw ValidationError("synth: signal strength must be > 0");
    if (min_slices < 1 || max_slices < min_slices) throw ValidationError("synth: bad slice range");
    if (label_noise < 0.0 || label_noise >= 1.0) throw ValidationError("synth: label noise must be in [0,1)");
    if (num_series < 1) throw ValidationError("synth: num_series must be >= 1");
    for (double r : class_rates) {
        if (r < 0.0 || r > 1.0) throw ValidationError("synth: class rate outside [0,1]");
    }
}

std::string series_name(std::size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "s%05zu", index);
    return buf;
}

namespace {

constexpr double kPi = 3.14159265358979323846;

double angle_distance(double a, double b) {
    const double d = std::atan2(std::sin(a - b), std::cos(a - b));
    return std::abs(d);
}

// Radial zone of one hemorrhage class, as fractions of the brain radius.
// Classes are annular so flips and small rotations preserve identity.
struct Zone {
    double r_lo, r_hi;       // radial band (blob classes use center/size instead)
    double arc;              // angular half-width; 2*pi means full ring
    bool is_blob;            // round blob instead of an annular arc
    double blob_r, blob_rad; // blob center radius and blob radius, as fractions
};

// Zones are coded by radius, angular extent, and blob-vs-band so every class
// stays resolvable after the downsampling the tiny configs train at; bands
// keep a gap under the skull ring so the bright bone does not swallow them.
Zone class_zone(std::size_t cls) {
    switch (cls) {
        case 0: return {0.72, 0.94, 0.45, false, 0, 0};   // EDH: short thick arc near the skull
        case 1: return {0, 0, 0, true, 0.32, 0.16};       // IPH: deep parenchymal blob
        case 2: return {0, 0, 0, true, 0.0, 0.18};        // IVH: central ventricle blob
        case 3: return {0.48, 0.66, 3.15, false, 0, 0};   // SAH: full thin ring deeper in
        default: return {0.72, 0.92, 1.45, false, 0, 0};  // SDH: long crescent under the skull
    }
}

struct BlobPlan {
    bool present = false;
    std::size_t first = 0, last = 0;  // inclusive slice run
    double angle = 0.0;
};

}  // namespace

GeneratedSeries generate_series(const SynthSpec& spec, std::size_t series_index) {
    spec.validate();
    if (series_index >= spec.num_series) {
        throw ValidationError("generate_series: index " + std::to_string(series_index) + " out of range");
    }
    Rng rng(derive_seed(derive_seed(spec.seed, "synth-series"), series_index));

    const std::size_t F = spec.frame;
    const std::size_t n_slices = spec.min_slices + rng.uniform_index(spec.max_slices - spec.min_slices + 1);
    const double cx = F / 2.0 + rng.uniform(-static_cast<double>(F) / 32.0, F / 32.0);
    const double cy = F / 2.0 + rng.uniform(-static_cast<double>(F) / 32.0, F / 32.0);
    const double R = F * rng.uniform(0.36, 0.42);
    const double skull = std::max(1.5, F / 32.0);

    // every per-class draw happens unconditionally so the stream layout is fixed
    std::array<BlobPlan, 5> plans;
    for (std::size_t c = 0; c < 5; ++c) {
        BlobPlan plan;
        plan.present = rng.bernoulli(spec.class_rates[c]);
        const std::size_t len = std::min(n_slices, static_cast<std::size_t>(2 + rng.uniform_index(3)));
        plan.first = rng.uniform_index(n_slices - len + 1);
        plan.last = plan.first + len - 1;
        plan.angle = rng.uniform(0.0, 2.0 * kPi);
        plans[c] = plan;
    }

    GeneratedSeries out;
    out.volume.series_id = series_name(series_index);
    out.volume.num_slices = n_slices;
    out.volume.height = out.volume.width = F;
    out.volume.data.assign(n_slices * F * F, -1000);
    out.volume.slice_order.resize(n_slices);
    std::iota(out.volume.slice_order.begin(), out.volume.slice_order.end(), 0);
    out.labels.assign(n_slices, LabelVector{});

    for (std::size_t s = 0; s < n_slices; ++s) {
        // mild spherical taper of the brain radius toward the stack ends
        const double t = n_slices == 1 ? 0.0
                                       : (static_cast<double>(s) - (n_slices - 1) / 2.0) /
                                             ((n_slices - 1) / 2.0 + 0.75);
        const double Rz = R * std::sqrt(std::max(0.25, 1.0 - 0.35 * t * t));
        std::int16_t* px = out.volume.slice(s);
        for (std::size_t y = 0; y < F; ++y) {
            for (std::size_t x = 0; x < F; ++x) {
                const double dy = y - cy, dx = x - cx;
                const double r = std::sqrt(dy * dy + dx * dx);
                if (r >= Rz + skull) continue;  // air stays -1000
                if (r >= Rz) {
                    px[y * F + x] = 1000;  // skull ring
                    continue;
                }
                double hu = 30.0 + rng.uniform(-8.0, 8.0);  // brain with texture
                const double rf = r / Rz;
                const double phi = std::atan2(dy, dx);
                for (std::size_t c = 0; c < 5; ++c) {
                    const BlobPlan& plan = plans[c];
                    if (!plan.present || s < plan.first || s > plan.last) continue;
                    const Zone z = class_zone(c);
                    bool hit;
                    if (z.is_blob) {
                        const double bx = cx + z.blob_r * Rz * std::cos(plan.angle);
                        const double by = cy + z.blob_r * Rz * std::sin(plan.angle);
                        const double bdx = x - bx, bdy = y - by;
                        hit = bdx * bdx + bdy * bdy <= (z.blob_rad * Rz) * (z.blob_rad * Rz);
                    } else {
                        hit = rf >= z.r_lo && rf <= z.r_hi && angle_distance(phi, plan.angle) <= z.arc;
                    }
                    if (hit) hu += spec.signal_strength;
                }
                px[y * F + x] = static_cast<std::int16_t>(std::lround(std::clamp(hu, -1000.0, 1000.0)));
            }
        }
        for (std::size_t c = 0; c < 5; ++c) {
            if (plans[c].present && s >= plans[c].first && s <= plans[c].last) out.labels[s][c] = 1;
        }
        out.labels[s].sync_any();
    }

    if (spec.label_noise > 0.0) {
        for (std::size_t s = 0; s < n_slices; ++s) {
            for (std::size_t c = 0; c < 5; ++c) {
                if (rng.bernoulli(spec.label_noise)) out.labels[s][c] ^= 1;
            }
            out.labels[s].sync_any();
        }
    }
    return out;
}

std::array<std::size_t, 3> split_counts(std::size_t n, const std::array<double, 3>& fractions) {
    double sum = 0.0;
    for (double f : fractions) {
        if (f < 0.0) throw ValidationError("split fraction must be non-negative");
        sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("split fractions must sum to 1");
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> remainder{};
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        const double exact = fractions[i] * static_cast<double>(n);
        counts[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
        remainder[i] = exact - static_cast<double>(counts[i]);
        assigned += counts[i];
    }
    while (assigned < n) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < 3; ++i) {
            if (remainder[i] > remainder[best] + 1e-12) best = i;
        }
        ++counts[best];
        remainder[best] = -1.0;
        ++assigned;
    }
    return counts;
}

DatasetPaths generate_dataset(const SynthSpec& spec, const std::array<double, 3>& fractions,
                              const std::string& out_dir) {
    spec.validate();
    const auto counts = split_counts(spec.num_series, fractions);

    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const std::string volumes_dir = out_dir + "/volumes";
    fs::create_directories(volumes_dir);

    // series-level split assignment over a seeded shuffle
    std::vector<std::size_t> order(spec.num_series);
    std::iota(order.begin(), order.end(), 0);
    Rng split_rng(derive_seed(spec.seed, "synth-split"));
    split_rng.shuffle(order);
    std::vector<Split> split_of(spec.num_series);
    for (std::size_t k = 0; k < spec.num_series; ++k) {
        if (k < counts[0]) split_of[order[k]] = Split::train;
        else if (k < counts[0] + counts[1]) split_of[order[k]] = Split::validation;
        else split_of[order[k]] = Split::unlabeled;
    }

    std::vector<SliceRecord> public_rows, answer_rows;
    for (std::size_t i = 0; i < spec.num_series; ++i) {
        GeneratedSeries gs = generate_series(spec, i);
        save_volume(gs.volume, volumes_dir + "/" + gs.volume.series_id + ".hdr",
                    volumes_dir + "/" + gs.volume.series_id + ".raw");
        for (std::size_t s = 0; s < gs.volume.num_slices; ++s) {
            SliceRecord row;
            row.series_id = gs.volume.series_id;
            row.slice_index = s;
            row.split = split_of[i];
            row.has_labels = true;
            row.labels = gs.labels[s];
            answer_rows.push_back(row);
            if (row.split == Split::unlabeled) {
                row.has_labels = false;
                row.labels = LabelVector{};
            }
            public_rows.push_back(row);
        }
    }

    DatasetPaths paths;
    paths.manifest = out_dir + "/manifest.csv";
    paths.hidden_answers = out_dir + "/answers_hidden.csv";
    paths.volumes_dir = volumes_dir;
    paths.split_counts = counts;
    save_manifest(paths.manifest, public_rows);
    save_manifest(paths.hidden_answers, answer_rows);
    return paths;
}

}  // namespace ihd
