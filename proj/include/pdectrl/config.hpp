#pragma once

#include <map>
#include <string>
#include <vector>

namespace pdectrl {

// Sectioned key=value run configuration. '#' starts a comment. Keys are
// validated against a fixed schema; unknown section.key pairs are rejected.
// Values left unset fall back to per-problem defaults.
class RunConfig {
public:
    static RunConfig from_file(const std::string& path);
    static RunConfig from_string(const std::string& text, const std::string& origin = "<string>");

    // "section.key=value", the --set override form.
    void apply_override(const std::string& assignment);

    bool has(const std::string& section, const std::string& key) const;
    std::string get_str(const std::string& section, const std::string& key,
                        const std::string& fallback) const;
    double get_f64(const std::string& section, const std::string& key, double fallback) const;
    int get_int(const std::string& section, const std::string& key, int fallback) const;
    std::vector<double> get_f64_list(const std::string& section, const std::string& key,
                                     std::vector<double> fallback) const;
    std::vector<int> get_int_list(const std::string& section, const std::string& key,
                                  std::vector<int> fallback) const;
    std::string require(const std::string& section, const std::string& key) const;

    // Problem kind, required and validated.
    std::string kind() const;

    const std::map<std::string, std::map<std::string, std::string>>& raw() const { return data_; }

private:
    void set_checked(const std::string& section, const std::string& key, const std::string& value);
    std::map<std::string, std::map<std::string, std::string>> data_;
};

}  // namespace pdectrl
