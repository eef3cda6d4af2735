#pragma once

#include <string>
#include <vector>

#include "pcdistill/types.hpp"

namespace pcdistill::io {

/// Shortest round-trip decimal form of a double ('.'-decimal, locale-free).
std::string format_double(double v);

/// RFC-4180 quoting: fields containing commas, quotes or newlines are quoted,
/// embedded quotes doubled.
std::string csv_escape(const std::string& field);

/// Minimal CSV emitter with a header row. Numeric cells go through
/// format_double, so files are byte-stable across runs.
class CsvWriter {
  public:
    explicit CsvWriter(std::vector<std::string> header);
    void add_row(const std::vector<std::string>& cells);
    std::string str() const { return out_; }
    void write(const std::string& path) const;

  private:
    std::string out_;
    std::size_t columns_;
};

/// Point cloud as CSV: one point per row, x,y,z followed by optional feature
/// columns, newline-terminated.
void write_cloud_csv(const std::string& path, const PointCloud& cloud);
PointCloud read_cloud_csv(const std::string& path);

/// Little-endian binary layout: magic "PCLD", u32 N, u32 d, then N*(3+d)
/// row-major doubles (positions then features per row).
void write_cloud_pcld(const std::string& path, const PointCloud& cloud);
PointCloud read_cloud_pcld(const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

}  // namespace pcdistill::io
