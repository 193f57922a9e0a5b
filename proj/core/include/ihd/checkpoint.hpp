#pragma once

#include <string>

#include "ihd/model.hpp"

namespace ihd {

// Text header (format version + model config) followed by named parameter
// blocks: "<name> <rank> <extents...>\n" then the raw little-endian float64
// payload. Loading rebuilds the model and validates every name and shape.
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace ihd
