#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace ihd {

// Flat key:value configuration. Keys are dotted (model.window, train.peak_lr);
// values stay strings until a typed getter pulls them out.
class KeyValueConfig {
  public:
    KeyValueConfig() = default;

    static KeyValueConfig from_file(const std::string& path);
    static KeyValueConfig from_string(const std::string& text);

    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const;

    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::size_t get_size(const std::string& key, std::size_t fallback) const;
    long long get_int(const std::string& key, long long fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<std::size_t> get_size_list(const std::string& key, std::vector<std::size_t> fallback) const;
    std::vector<double> get_double_list(const std::string& key, std::vector<double> fallback) const;

    const std::map<std::string, std::string>& entries() const { return entries_; }
    std::string to_string() const;

  private:
    std::map<std::string, std::string> entries_;
};

}  // namespace ihd
