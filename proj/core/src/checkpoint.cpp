#include "ihd/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "ihd/errors.hpp"

namespace ihd {

namespace {

constexpr const char* kMagic = "ihd-checkpoint: 1";

void append_le64(std::string& out, double v) {
    const auto u = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((u >> (8 * b)) & 0xff));
}

double read_le64(const char* p) {
    std::uint64_t u = 0;
    for (int b = 7; b >= 0; --b) u = (u << 8) | static_cast<std::uint8_t>(p[b]);
    return std::bit_cast<double>(u);
}

// consumes one text line from buf at pos
std::string take_line(const std::string& buf, std::size_t& pos, const std::string& path) {
    const std::size_t nl = buf.find('\n', pos);
    if (nl == std::string::npos) throw IoError(path + ": truncated checkpoint header");
    std::string line = buf.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
    std::string out;
    out += kMagic;
    out += "\n";
    KeyValueConfig cfg;
    model.config.to_config(cfg);
    out += cfg.to_string();
    out += "params: " + std::to_string(model.params.size()) + "\n";
    for (const auto& [name, node] : model.params) {
        out += name + " " + std::to_string(node->value.rank());
        for (std::size_t d = 0; d < node->value.rank(); ++d) {
            out += " " + std::to_string(node->value.extent(d));
        }
        out += "\n";
        for (std::size_t i = 0; i < node->value.size(); ++i) append_le64(out, node->value[i]);
    }
    std::ofstream file(path, std::ios::binary);
    if (!file) throw IoError("cannot write checkpoint " + path);
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!file) throw IoError("short write to checkpoint " + path);
}

Model load_checkpoint(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw IoError("cannot open checkpoint " + path);
    std::stringstream ss;
    ss << file.rdbuf();
    const std::string buf = ss.str();

    std::size_t pos = 0;
    if (take_line(buf, pos, path) != kMagic) throw IoError(path + ": not a recognized checkpoint");
    std::string config_text;
    std::size_t param_count = 0;
    for (;;) {
        const std::string line = take_line(buf, pos, path);
        if (line.rfind("params: ", 0) == 0) {
            param_count = static_cast<std::size_t>(std::stoull(line.substr(8)));
            break;
        }
        config_text += line + "\n";
    }
    const ModelConfig config = ModelConfig::from_config(KeyValueConfig::from_string(config_text));

    Model model = build_model(config, 0);
    if (param_count != model.params.size()) {
        throw IoError(path + ": expected " + std::to_string(model.params.size()) + " parameter blocks, found " +
                      std::to_string(param_count));
    }
    for (auto& [name, node] : model.params) {
        std::istringstream header(take_line(buf, pos, path));
        std::string stored_name;
        std::size_t rank = 0;
        header >> stored_name >> rank;
        if (!header || stored_name != name) {
            throw IoError(path + ": expected parameter '" + name + "', found '" + stored_name + "'");
        }
        Shape shape(rank);
        for (std::size_t d = 0; d < rank; ++d) header >> shape[d];
        if (!header || shape != node->value.shape()) {
            throw IoError(path + ": shape mismatch for parameter '" + name + "'");
        }
        const std::size_t n = node->value.size();
        if (pos + n * 8 > buf.size()) throw IoError(path + ": truncated payload for '" + name + "'");
        for (std::size_t i = 0; i < n; ++i) node->value[i] = read_le64(buf.data() + pos + i * 8);
        pos += n * 8;
    }
    if (pos != buf.size()) throw IoError(path + ": trailing bytes after last parameter");
    return model;
}

}  // namespace ihd
