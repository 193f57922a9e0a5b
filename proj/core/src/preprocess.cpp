#include "ihd/preprocess.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "ihd/config.hpp"
#include "ihd/errors.hpp"

namespace ihd {

void HUVolume::validate() const {
    if (num_slices < 1) throw ValidationError("volume " + series_id + ": no slices");
    if (height < 1 || width < 1) throw ValidationError("volume " + series_id + ": empty frame");
    if (data.size() != num_slices * height * width) {
        throw ValidationError("volume " + series_id + ": payload size mismatch");
    }
    if (slice_order.size() != num_slices) {
        throw ValidationError("volume " + series_id + ": slice_order length mismatch");
    }
    std::vector<bool> seen(num_slices, false);
    for (std::size_t p : slice_order) {
        if (p >= num_slices || seen[p]) {
            throw ValidationError("volume " + series_id + ": slice_order is not a permutation");
        }
        seen[p] = true;
    }
}

std::vector<WindowSpec> default_windows() {
    return {WindowSpec{40.0, 80.0}, WindowSpec{80.0, 200.0}, WindowSpec{40.0, 380.0}};
}

double hu_window_value(double hu, const WindowSpec& w) {
    if (w.width <= 0.0) throw ValidationError("window width must be positive");
    const double lo = w.center - w.width / 2.0;
    const double v = (hu - lo) / w.width;
    return std::clamp(v, 0.0, 1.0);
}

void hu_window_grid(const std::int16_t* slice, std::size_t n, const WindowSpec& w, double* out) {
    if (w.width <= 0.0) throw ValidationError("window width must be positive");
    const double lo = w.center - w.width / 2.0;
    const double inv = 1.0 / w.width;
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = std::clamp((static_cast<double>(slice[i]) - lo) * inv, 0.0, 1.0);
    }
}

void compose_channels(const std::int16_t* slice, std::size_t h, std::size_t w,
                      const std::vector<WindowSpec>& windows, double* out) {
    if (windows.size() != 3) {
        throw ValidationError("compose_channels: expected exactly 3 windows, got " +
                              std::to_string(windows.size()));
    }
    const std::size_t n = h * w;
    for (std::size_t c = 0; c < 3; ++c) hu_window_grid(slice, n, windows[c], out + c * n);
}

namespace {

// Binary erosion with a (2r+1) square; out-of-bounds counts as background.
// Separable: min over rows, then min over columns.
void erode(const std::vector<std::uint8_t>& in, std::vector<std::uint8_t>& out, std::size_t h, std::size_t w,
           std::size_t r, std::vector<std::uint8_t>& tmp) {
    const long rr = static_cast<long>(r);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            std::uint8_t v = 1;
            for (long dx = -rr; dx <= rr; ++dx) {
                const long xx = static_cast<long>(x) + dx;
                if (xx < 0 || xx >= static_cast<long>(w) || !in[y * w + xx]) {
                    v = 0;
                    break;
                }
            }
            tmp[y * w + x] = v;
        }
    }
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            std::uint8_t v = 1;
            for (long dy = -rr; dy <= rr; ++dy) {
                const long yy = static_cast<long>(y) + dy;
                if (yy < 0 || yy >= static_cast<long>(h) || !tmp[yy * w + x]) {
                    v = 0;
                    break;
                }
            }
            out[y * w + x] = v;
        }
    }
}

// Binary dilation with a (2r+1) square, separable max.
void dilate(const std::vector<std::uint8_t>& in, std::vector<std::uint8_t>& out, std::size_t h, std::size_t w,
            std::size_t r, std::vector<std::uint8_t>& tmp) {
    const long rr = static_cast<long>(r);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            std::uint8_t v = 0;
            for (long dx = -rr; dx <= rr; ++dx) {
                const long xx = static_cast<long>(x) + dx;
                if (xx >= 0 && xx < static_cast<long>(w) && in[y * w + xx]) {
                    v = 1;
                    break;
                }
            }
            tmp[y * w + x] = v;
        }
    }
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            std::uint8_t v = 0;
            for (long dy = -rr; dy <= rr; ++dy) {
                const long yy = static_cast<long>(y) + dy;
                if (yy >= 0 && yy < static_cast<long>(h) && tmp[yy * w + x]) {
                    v = 1;
                    break;
                }
            }
            out[y * w + x] = v;
        }
    }
}

}  // namespace

CropRect brain_crop(const HUVolume& volume, double air_threshold, std::size_t opening_radius) {
    volume.validate();
    if (opening_radius < 1) throw ValidationError("brain_crop: opening_radius must be >= 1");
    const std::size_t h = volume.height, w = volume.width;
    std::vector<std::uint8_t> mask(h * w), opened(h * w), tmp(h * w), eroded(h * w);
    std::vector<std::uint8_t> unioned(h * w, 0);
    for (std::size_t s = 0; s < volume.num_slices; ++s) {
        const std::int16_t* px = volume.slice(s);
        for (std::size_t i = 0; i < h * w; ++i) mask[i] = px[i] > air_threshold ? 1 : 0;
        erode(mask, eroded, h, w, opening_radius, tmp);
        dilate(eroded, opened, h, w, opening_radius, tmp);
        for (std::size_t i = 0; i < h * w; ++i) unioned[i] |= opened[i];
    }
    std::size_t r0 = h, r1 = 0, c0 = w, c1 = 0;
    bool any = false;
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            if (!unioned[y * w + x]) continue;
            any = true;
            r0 = std::min(r0, y);
            r1 = std::max(r1, y);
            c0 = std::min(c0, x);
            c1 = std::max(c1, x);
        }
    }
    if (!any) return CropRect{0, 0, h, w};
    return CropRect{r0, c0, r1 + 1, c1 + 1};
}

void resize_bilinear(const double* src, std::size_t sh, std::size_t sw, double* dst, std::size_t th,
                     std::size_t tw) {
    if (th < 1 || tw < 1) throw ValidationError("resize_bilinear: target must be at least 1x1");
    if (sh < 1 || sw < 1) throw ValidationError("resize_bilinear: source must be at least 1x1");
    // horizontal pass into sh x tw, then vertical into th x tw
    std::vector<double> mid(sh * tw);
    const double sx = static_cast<double>(sw) / static_cast<double>(tw);
    for (std::size_t x = 0; x < tw; ++x) {
        const double cx = (static_cast<double>(x) + 0.5) * sx - 0.5;
        const double fx = std::floor(cx);
        const double t = cx - fx;
        const long x0 = std::clamp(static_cast<long>(fx), 0L, static_cast<long>(sw) - 1);
        const long x1 = std::clamp(static_cast<long>(fx) + 1, 0L, static_cast<long>(sw) - 1);
        for (std::size_t y = 0; y < sh; ++y) {
            const double* row = src + y * sw;
            mid[y * tw + x] = row[x0] * (1.0 - t) + row[x1] * t;
        }
    }
    const double sy = static_cast<double>(sh) / static_cast<double>(th);
    for (std::size_t y = 0; y < th; ++y) {
        const double cy = (static_cast<double>(y) + 0.5) * sy - 0.5;
        const double fy = std::floor(cy);
        const double t = cy - fy;
        const long y0 = std::clamp(static_cast<long>(fy), 0L, static_cast<long>(sh) - 1);
        const long y1 = std::clamp(static_cast<long>(fy) + 1, 0L, static_cast<long>(sh) - 1);
        for (std::size_t x = 0; x < tw; ++x) {
            dst[y * tw + x] = mid[y0 * tw + x] * (1.0 - t) + mid[y1 * tw + x] * t;
        }
    }
}

SeriesBatch stack_series(const HUVolume& volume, const std::vector<WindowSpec>& windows, const CropRect& crop,
                         std::size_t target) {
    volume.validate();
    if (crop.row1 <= crop.row0 || crop.col1 <= crop.col0 || crop.row1 > volume.height ||
        crop.col1 > volume.width) {
        throw ValidationError("stack_series: crop rectangle outside frame for " + volume.series_id);
    }
    if (target < 1) throw ValidationError("stack_series: target resolution must be >= 1");

    const std::size_t ch = crop.rows(), cw = crop.cols();
    SeriesBatch batch;
    batch.series_id = volume.series_id;
    batch.num_slices = volume.num_slices;
    batch.height = batch.width = target;
    batch.source_crop = crop;
    batch.images.assign(volume.num_slices * 3 * target * target, 0.0);

    // stored index of the slice at each stacking position
    std::vector<std::size_t> at_position(volume.num_slices);
    for (std::size_t k = 0; k < volume.num_slices; ++k) at_position[volume.slice_order[k]] = k;

    std::vector<std::int16_t> cropped(ch * cw);
    std::vector<double> channels(3 * ch * cw);
    for (std::size_t pos = 0; pos < volume.num_slices; ++pos) {
        const std::int16_t* px = volume.slice(at_position[pos]);
        for (std::size_t y = 0; y < ch; ++y) {
            std::memcpy(cropped.data() + y * cw, px + (crop.row0 + y) * volume.width + crop.col0,
                        cw * sizeof(std::int16_t));
        }
        compose_channels(cropped.data(), ch, cw, windows, channels.data());
        double* out = batch.image(pos);
        for (std::size_t c = 0; c < 3; ++c) {
            resize_bilinear(channels.data() + c * ch * cw, ch, cw, out + c * target * target, target, target);
        }
    }
    return batch;
}

SeriesBatch preprocess_series(const HUVolume& volume, const PrepParams& params) {
    const CropRect crop = brain_crop(volume, params.air_threshold, params.opening_radius);
    return stack_series(volume, default_windows(), crop, params.resolution);
}

// ---- file pairs ----

namespace {

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("short write to " + path);
}

std::string sibling_raw_path(const std::string& header_path) {
    const std::size_t dot = header_path.find_last_of('.');
    const std::size_t slash = header_path.find_last_of("/\\");
    if (dot == std::string::npos || (slash != std::string::npos && dot < slash)) {
        return header_path + ".raw";
    }
    return header_path.substr(0, dot) + ".raw";
}

std::vector<char> read_all(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

}  // namespace

void save_volume(const HUVolume& volume, const std::string& header_path, const std::string& raw_path) {
    volume.validate();
    std::string header;
    header += "series_id: " + volume.series_id + "\n";
    header += "num_slices: " + std::to_string(volume.num_slices) + "\n";
    header += "height: " + std::to_string(volume.height) + "\n";
    header += "width: " + std::to_string(volume.width) + "\n";
    header += "value_type: int16\n";
    header += "byte_order: little-endian\n";
    write_file(header_path, header);

    // payload in stacking order
    std::vector<std::size_t> at_position(volume.num_slices);
    for (std::size_t k = 0; k < volume.num_slices; ++k) at_position[volume.slice_order[k]] = k;
    std::string payload;
    payload.resize(volume.data.size() * 2);
    std::size_t o = 0;
    for (std::size_t pos = 0; pos < volume.num_slices; ++pos) {
        const std::int16_t* px = volume.slice(at_position[pos]);
        for (std::size_t i = 0; i < volume.slice_pixels(); ++i) {
            const auto u = static_cast<std::uint16_t>(px[i]);
            payload[o++] = static_cast<char>(u & 0xff);
            payload[o++] = static_cast<char>((u >> 8) & 0xff);
        }
    }
    write_file(raw_path, payload);
}

HUVolume load_volume(const std::string& header_path) {
    const KeyValueConfig header = KeyValueConfig::from_file(header_path);
    HUVolume volume;
    volume.series_id = header.get_string("series_id", "");
    volume.num_slices = header.get_size("num_slices", 0);
    volume.height = header.get_size("height", 0);
    volume.width = header.get_size("width", 0);
    if (volume.series_id.empty()) throw IoError(header_path + ": missing series_id");
    if (header.get_string("value_type", "") != "int16") {
        throw IoError(header_path + ": unsupported value_type");
    }
    if (header.get_string("byte_order", "") != "little-endian") {
        throw IoError(header_path + ": unsupported byte_order");
    }
    const std::string raw_path = sibling_raw_path(header_path);
    const std::vector<char> bytes = read_all(raw_path);
    const std::size_t n = volume.num_slices * volume.height * volume.width;
    if (bytes.size() != n * 2) {
        throw IoError(raw_path + ": expected " + std::to_string(n * 2) + " bytes, got " +
                      std::to_string(bytes.size()));
    }
    volume.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto lo = static_cast<std::uint8_t>(bytes[2 * i]);
        const auto hi = static_cast<std::uint8_t>(bytes[2 * i + 1]);
        volume.data[i] = static_cast<std::int16_t>(static_cast<std::uint16_t>(lo) |
                                                   (static_cast<std::uint16_t>(hi) << 8));
    }
    volume.slice_order.resize(volume.num_slices);
    std::iota(volume.slice_order.begin(), volume.slice_order.end(), 0);
    volume.validate();
    return volume;
}

void save_batch(const SeriesBatch& batch, const std::string& header_path, const std::string& raw_path) {
    std::string header;
    header += "series_id: " + batch.series_id + "\n";
    header += "num_slices: " + std::to_string(batch.num_slices) + "\n";
    header += "channels: " + std::to_string(batch.channels) + "\n";
    header += "height: " + std::to_string(batch.height) + "\n";
    header += "width: " + std::to_string(batch.width) + "\n";
    header += "crop: " + std::to_string(batch.source_crop.row0) + "," + std::to_string(batch.source_crop.col0) +
              "," + std::to_string(batch.source_crop.row1) + "," + std::to_string(batch.source_crop.col1) + "\n";
    header += "value_type: float64\n";
    header += "byte_order: little-endian\n";
    write_file(header_path, header);

    std::string payload;
    payload.resize(batch.images.size() * 8);
    std::size_t o = 0;
    for (double v : batch.images) {
        const auto u = std::bit_cast<std::uint64_t>(v);
        for (int b = 0; b < 8; ++b) payload[o++] = static_cast<char>((u >> (8 * b)) & 0xff);
    }
    write_file(raw_path, payload);
}

SeriesBatch load_batch(const std::string& header_path) {
    const KeyValueConfig header = KeyValueConfig::from_file(header_path);
    SeriesBatch batch;
    batch.series_id = header.get_string("series_id", "");
    batch.num_slices = header.get_size("num_slices", 0);
    batch.channels = header.get_size("channels", 3);
    batch.height = header.get_size("height", 0);
    batch.width = header.get_size("width", 0);
    if (header.get_string("value_type", "") != "float64") {
        throw IoError(header_path + ": unsupported value_type");
    }
    const auto crop = header.get_size_list("crop", {0, 0, 0, 0});
    if (crop.size() != 4) throw IoError(header_path + ": malformed crop");
    batch.source_crop = CropRect{crop[0], crop[1], crop[2], crop[3]};
    const std::vector<char> bytes = read_all(sibling_raw_path(header_path));
    const std::size_t n = batch.num_slices * batch.channels * batch.height * batch.width;
    if (bytes.size() != n * 8) throw IoError(header_path + ": payload size mismatch");
    batch.images.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t u = 0;
        for (int b = 7; b >= 0; --b) {
            u = (u << 8) | static_cast<std::uint8_t>(bytes[8 * i + b]);
        }
        batch.images[i] = std::bit_cast<double>(u);
    }
    return batch;
}

}  // namespace ihd
