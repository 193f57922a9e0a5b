#include "ihd/data.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "ihd/errors.hpp"

namespace ihd {

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "validation") return Split::validation;
    if (s == "unlabeled") return Split::unlabeled;
    throw DataError("unknown split name: " + s);
}

void save_manifest(const std::string& path, const std::vector<SliceRecord>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << "series_id,slice_index,split";
    for (const char* name : kClassShortNames) out << "," << name;
    out << "\n";
    for (const SliceRecord& r : rows) {
        out << r.series_id << "," << r.slice_index << "," << split_name(r.split);
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            out << ",";
            if (r.has_labels) out << r.labels[c];
        }
        out << "\n";
    }
    if (!out) throw IoError("short write to " + path);
}

std::vector<SliceRecord> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::vector<SliceRecord> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (lineno == 1 && line.rfind("series_id,", 0) == 0) continue;  // header
        std::vector<std::string> cols;
        std::istringstream ls(line);
        std::string col;
        while (std::getline(ls, col, ',')) cols.push_back(col);
        // a trailing blank column is eaten by getline; restore it
        while (cols.size() < 3 + kNumClasses) cols.push_back("");
        if (cols.size() != 3 + kNumClasses) {
            throw DataError(path + " line " + std::to_string(lineno) + ": expected " +
                            std::to_string(3 + kNumClasses) + " columns");
        }
        SliceRecord r;
        r.series_id = cols[0];
        try {
            r.slice_index = static_cast<std::size_t>(std::stoull(cols[1]));
        } catch (const std::exception&) {
            throw DataError(path + " line " + std::to_string(lineno) + ": bad slice_index " + cols[1]);
        }
        r.split = split_from_string(cols[2]);
        const bool blank = cols[3].empty();
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            if (cols[3 + c].empty() != blank) {
                throw DataError(path + " line " + std::to_string(lineno) + ": partially blank labels");
            }
            if (blank) continue;
            if (cols[3 + c] != "0" && cols[3 + c] != "1") {
                throw DataError(path + " line " + std::to_string(lineno) + ": label not 0/1: " + cols[3 + c]);
            }
            r.labels[c] = cols[3 + c] == "1" ? 1 : 0;
        }
        r.has_labels = !blank;
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<SeriesRecord> group_series(const std::vector<SliceRecord>& rows) {
    std::map<std::string, std::vector<const SliceRecord*>> by_series;
    std::vector<std::string> order;
    for (const SliceRecord& r : rows) {
        auto [it, fresh] = by_series.try_emplace(r.series_id);
        if (fresh) order.push_back(r.series_id);
        it->second.push_back(&r);
    }
    std::vector<SeriesRecord> out;
    out.reserve(order.size());
    for (const std::string& id : order) {
        auto& slice_rows = by_series[id];
        std::sort(slice_rows.begin(), slice_rows.end(),
                  [](const SliceRecord* a, const SliceRecord* b) { return a->slice_index < b->slice_index; });
        SeriesRecord rec;
        rec.series_id = id;
        rec.split = slice_rows.front()->split;
        rec.has_labels = slice_rows.front()->has_labels;
        rec.num_slices = slice_rows.size();
        for (std::size_t i = 0; i < slice_rows.size(); ++i) {
            const SliceRecord* r = slice_rows[i];
            if (r->slice_index != i) {
                throw DataError("series " + id + ": slice indices not contiguous from 0");
            }
            if (r->split != rec.split) throw DataError("series " + id + ": slices straddle splits");
            if (r->has_labels != rec.has_labels) throw DataError("series " + id + ": mixed labeled state");
            if (rec.has_labels) rec.labels.push_back(r->labels);
        }
        out.push_back(std::move(rec));
    }
    return out;
}

std::vector<SeriesRecord> filter_split(const std::vector<SeriesRecord>& series, Split split) {
    std::vector<SeriesRecord> out;
    for (const SeriesRecord& s : series) {
        if (s.split == split) out.push_back(s);
    }
    return out;
}

SeriesStore::SeriesStore(std::string volumes_dir, PrepParams params)
    : volumes_dir_(std::move(volumes_dir)), params_(params) {}

const SeriesBatch& SeriesStore::batch(const std::string& series_id) {
    auto it = cache_.find(series_id);
    if (it != cache_.end()) return it->second;
    const HUVolume volume = load_volume(volumes_dir_ + "/" + series_id + ".hdr");
    auto [pos, _] = cache_.emplace(series_id, preprocess_series(volume, params_));
    return pos->second;
}

}  // namespace ihd
