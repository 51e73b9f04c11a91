#pragma once

#include <chrono>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace deqntk {

// Flat key=value document. Blank lines and lines starting with '#' are ignored.
class RunConfig {
public:
    static RunConfig parse(const std::string& text, const std::string& origin = "<string>");
    static RunConfig from_file(const std::string& path);

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    bool has(const std::string& key) const { return values_.count(key) > 0; }
    // Later documents override earlier ones.
    void merge(const RunConfig& other);

    std::string get_string(const std::string& key) const;
    double get_double(const std::string& key) const;
    long long get_int(const std::string& key) const;
    std::uint64_t get_u64(const std::string& key) const;
    std::vector<int> get_int_list(const std::string& key) const;  // "1,2,5"

    // Throws ConfigError naming the first key not in `allowed`.
    void require_known(const std::vector<std::string>& allowed) const;

    const std::map<std::string, std::string>& values() const { return values_; }
    std::string to_text() const;

private:
    std::map<std::string, std::string> values_;
};

// RFC 4180 style; doubles at 17 significant digits.
class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::vector<std::string>& header);

    CsvWriter& cell(const std::string& s);
    CsvWriter& cell(const char* s) { return cell(std::string(s)); }
    CsvWriter& cell(double v);
    CsvWriter& cell(int v) { return cell(static_cast<long long>(v)); }
    CsvWriter& cell(long long v);
    CsvWriter& cell(std::size_t v) { return cell(static_cast<long long>(v)); }
    void end_row();

    template <class... T>
    void row(const T&... cells) {
        (cell(cells), ...);
        end_row();
    }

private:
    std::ofstream out_;
    std::size_t columns_;
    std::size_t pending_ = 0;
    std::string path_;
};

std::string format_double(double v);
std::string csv_escape(const std::string& s);

std::string git_revision();

struct Manifest {
    std::string command;
    RunConfig config;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    std::vector<std::string> outputs;
};

// manifest.txt: the resolved config as key=value (re-runnable via --config) preceded by
// '#' lines with the command, git revision, start time and wall time.
void write_manifest(const std::string& dir, const Manifest& m);

}  // namespace deqntk
