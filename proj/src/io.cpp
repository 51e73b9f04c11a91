#include "deqntk/io.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <sstream>

#include "deqntk/errors.hpp"

#ifndef DEQNTK_GIT_REVISION
#define DEQNTK_GIT_REVISION "unknown"
#endif

namespace deqntk {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text, const std::string& origin) {
    RunConfig c;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value");
        const std::string key = trim(t.substr(0, eq));
        if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        c.values_[key] = trim(t.substr(eq + 1));
    }
    return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str(), path);
}

void RunConfig::merge(const RunConfig& other) {
    for (const auto& [k, v] : other.values_) values_[k] = v;
}

std::string RunConfig::get_string(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing config key '" + key + "'");
    return it->second;
}

double RunConfig::get_double(const std::string& key) const {
    const std::string s = get_string(key);
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || *end != '\0' || errno == ERANGE)
        throw ConfigError("config key '" + key + "' is not a number: '" + s + "'");
    return v;
}

long long RunConfig::get_int(const std::string& key) const {
    const std::string s = get_string(key);
    char* end = nullptr;
    errno = 0;
    const long long v = std::strtoll(s.c_str(), &end, 10);
    if (s.empty() || *end != '\0' || errno == ERANGE)
        throw ConfigError("config key '" + key + "' is not an integer: '" + s + "'");
    return v;
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
    const std::string s = get_string(key);
    char* end = nullptr;
    errno = 0;
    const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    if (s.empty() || s[0] == '-' || *end != '\0' || errno == ERANGE)
        throw ConfigError("config key '" + key + "' is not a nonnegative integer: '" + s + "'");
    return v;
}

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
    std::vector<int> out;
    std::stringstream ss(get_string(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
        RunConfig one;
        one.set(key, trim(item));
        const long long v = one.get_int(key);
        if (v < INT32_MIN || v > INT32_MAX) throw ConfigError("config key '" + key + "' entry out of range");
        out.push_back(static_cast<int>(v));
    }
    if (out.empty()) throw ConfigError("config key '" + key + "' is an empty list");
    return out;
}

void RunConfig::require_known(const std::vector<std::string>& allowed) const {
    for (const auto& [k, v] : values_)
        if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
            throw ConfigError("unknown config key '" + k + "'");
}

std::string RunConfig::to_text() const {
    std::string s;
    for (const auto& [k, v] : values_) s += k + "=" + v + "\n";
    return s;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

CsvWriter::CsvWriter(const std::string& path, const std::vector<std::string>& header)
    : out_(path), columns_(header.size()), path_(path) {
    if (!out_) throw DataError("cannot write " + path);
    for (const auto& h : header) cell(h);
    end_row();
}

CsvWriter& CsvWriter::cell(const std::string& s) {
    if (pending_ > 0) out_ << ',';
    out_ << csv_escape(s);
    ++pending_;
    return *this;
}

CsvWriter& CsvWriter::cell(double v) { return cell(format_double(v)); }

CsvWriter& CsvWriter::cell(long long v) { return cell(std::to_string(v)); }

void CsvWriter::end_row() {
    if (pending_ != columns_)
        throw DataError(path_ + ": row has " + std::to_string(pending_) + " cells, header has " +
                        std::to_string(columns_));
    out_ << "\r\n";
    pending_ = 0;
    if (!out_) throw DataError("write failed for " + path_);
}

std::string git_revision() { return DEQNTK_GIT_REVISION; }

void write_manifest(const std::string& dir, const Manifest& m) {
    std::filesystem::create_directories(dir);
    const auto path = (std::filesystem::path(dir) / "manifest.txt").string();
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - m.start).count();
    const std::time_t now = std::time(nullptr);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    f << "# command: " << m.command << "\n";
    f << "# git_revision: " << git_revision() << "\n";
    f << "# finished_utc: " << stamp << "\n";
    f << "# wall_time_s: " << format_double(wall) << "\n";
    for (const auto& o : m.outputs) f << "# output: " << o << "\n";
    f << m.config.to_text();
    if (!f) throw DataError("write failed for " + path);
}

}  // namespace deqntk
