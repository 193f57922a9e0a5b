#pragma once

#include <cstdint>
#include <cstddef>
#include <string>
#include <vector>

namespace ihd {

// One CT series: ordered stack of H x W signed Hounsfield-unit slices.
struct HUVolume {
    std::string series_id;
    std::size_t num_slices = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    // slice-major, row-major payload
    std::vector<std::int16_t> data;
    // stacking order: slice_order[k] is the position of stored slice k
    std::vector<std::size_t> slice_order;

    const std::int16_t* slice(std::size_t i) const { return data.data() + i * height * width; }
    std::int16_t* slice(std::size_t i) { return data.data() + i * height * width; }
    std::size_t slice_pixels() const { return height * width; }
    void validate() const;
};

struct WindowSpec {
    double center = 0.0;  // W_c
    double width = 0.0;   // W_r, must be > 0
};

// Defaults: brain 40/80, blood 80/200, soft tissue 40/380.
std::vector<WindowSpec> default_windows();

struct CropRect {
    std::size_t row0 = 0, col0 = 0;  // inclusive
    std::size_t row1 = 0, col1 = 0;  // exclusive
    std::size_t rows() const { return row1 - row0; }
    std::size_t cols() const { return col1 - col0; }
};

// Model-ready stack: N x 3 x h x w floats in [0,1], slices in stacking order.
struct SeriesBatch {
    std::string series_id;
    std::size_t num_slices = 0;
    std::size_t channels = 3;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> images;
    CropRect source_crop;

    const double* image(std::size_t slice) const { return images.data() + slice * channels * height * width; }
    double* image(std::size_t slice) { return images.data() + slice * channels * height * width; }
};

double hu_window_value(double hu, const WindowSpec& w);
// out has slice extent h*w
void hu_window_grid(const std::int16_t* slice, std::size_t n, const WindowSpec& w, double* out);

// 3 channels in window order; out size 3*h*w, channel-major
void compose_channels(const std::int16_t* slice, std::size_t h, std::size_t w,
                      const std::vector<WindowSpec>& windows, double* out);

// Union bounding box of the opened above-threshold masks; full frame when the
// opening leaves nothing.
CropRect brain_crop(const HUVolume& volume, double air_threshold, std::size_t opening_radius);

// Separable bilinear resize, pixel centers at (i + 0.5)/n, edge clamped.
void resize_bilinear(const double* src, std::size_t sh, std::size_t sw, double* dst, std::size_t th,
                     std::size_t tw);

struct PrepParams {
    double air_threshold = -500.0;
    std::size_t opening_radius = 3;
    std::size_t resolution = 224;
};

SeriesBatch stack_series(const HUVolume& volume, const std::vector<WindowSpec>& windows, const CropRect& crop,
                         std::size_t target);
SeriesBatch preprocess_series(const HUVolume& volume, const PrepParams& params);

// Volume file pair: text header + raw int16 little-endian payload.
void save_volume(const HUVolume& volume, const std::string& header_path, const std::string& raw_path);
HUVolume load_volume(const std::string& header_path);

// SeriesBatch file pair: text header + raw float64 little-endian payload.
void save_batch(const SeriesBatch& batch, const std::string& header_path, const std::string& raw_path);
SeriesBatch load_batch(const std::string& header_path);

}  // namespace ihd
