#pragma once

#include <map>
#include <string>
#include <vector>

#include "ihd/labels.hpp"
#include "ihd/preprocess.hpp"

namespace ihd {

// One manifest row.
struct SliceRecord {
    std::string series_id;
    std::size_t slice_index = 0;
    Split split = Split::train;
    bool has_labels = false;
    LabelVector labels;
};

void save_manifest(const std::string& path, const std::vector<SliceRecord>& rows);
std::vector<SliceRecord> load_manifest(const std::string& path);

// Slice rows of one series, in slice order.
struct SeriesRecord {
    std::string series_id;
    Split split = Split::train;
    bool has_labels = false;
    std::vector<LabelVector> labels;  // empty when !has_labels
    std::size_t num_slices = 0;
};

// Groups rows by series; validates contiguous slice indices 0..N-1.
std::vector<SeriesRecord> group_series(const std::vector<SliceRecord>& rows);

std::vector<SeriesRecord> filter_split(const std::vector<SeriesRecord>& series, Split split);

// Loads volumes from a directory of <id>.hdr/.raw pairs and caches the
// preprocessed batches.
class SeriesStore {
  public:
    SeriesStore(std::string volumes_dir, PrepParams params);

    const SeriesBatch& batch(const std::string& series_id);
    PrepParams params() const { return params_; }

  private:
    std::string volumes_dir_;
    PrepParams params_;
    std::map<std::string, SeriesBatch> cache_;
};

}  // namespace ihd
