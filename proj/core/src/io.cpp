#include "pcdistill/io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "pcdistill/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "binary point cloud format is little-endian");

namespace pcdistill::io {

std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) throw NumericError("format_double: conversion failed");
    return std::string(buf, ptr);
}

std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

CsvWriter::CsvWriter(std::vector<std::string> header) : columns_(header.size()) {
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (i) out_ += ',';
        out_ += csv_escape(header[i]);
    }
    out_ += '\n';
}

void CsvWriter::add_row(const std::vector<std::string>& cells) {
    if (cells.size() != columns_)
        throw std::invalid_argument("CsvWriter: row width != header width");
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out_ += ',';
        out_ += csv_escape(cells[i]);
    }
    out_ += '\n';
}

void CsvWriter::write(const std::string& path) const { write_file(path, out_); }

void write_cloud_csv(const std::string& path, const PointCloud& cloud) {
    std::string out;
    const Index d = cloud.has_features() ? cloud.features.cols() : 0;
    for (Index i = 0; i < cloud.size(); ++i) {
        out += format_double(cloud.positions(i, 0));
        out += ',';
        out += format_double(cloud.positions(i, 1));
        out += ',';
        out += format_double(cloud.positions(i, 2));
        for (Index c = 0; c < d; ++c) {
            out += ',';
            out += format_double(cloud.features(i, c));
        }
        out += '\n';
    }
    write_file(path, out);
}

PointCloud read_cloud_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open point cloud: " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        const char* p = line.data();
        const char* end = line.data() + line.size();
        while (p < end) {
            double v;
            auto [next, ec] = std::from_chars(p, end, v);
            if (ec != std::errc())
                throw IoError("bad numeric field in " + path + ": " + line);
            row.push_back(v);
            p = next;
            if (p < end && *p == ',') ++p;
        }
        if (row.size() < 3) throw IoError("point row with fewer than 3 fields in " + path);
        if (!rows.empty() && rows.front().size() != row.size())
            throw IoError("ragged point rows in " + path);
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw IoError("empty point cloud file: " + path);

    PointCloud cloud;
    const Index n = static_cast<Index>(rows.size());
    const Index d = static_cast<Index>(rows.front().size()) - 3;
    cloud.positions.resize(n, 3);
    if (d > 0) cloud.features.resize(n, d);
    for (Index i = 0; i < n; ++i) {
        for (Index c = 0; c < 3; ++c)
            cloud.positions(i, c) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
        for (Index c = 0; c < d; ++c)
            cloud.features(i, c) =
                rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(c + 3)];
    }
    return cloud;
}

void write_cloud_pcld(const std::string& path, const PointCloud& cloud) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    const std::uint32_t n = static_cast<std::uint32_t>(cloud.size());
    const std::uint32_t d =
        cloud.has_features() ? static_cast<std::uint32_t>(cloud.features.cols()) : 0;
    os.write("PCLD", 4);
    os.write(reinterpret_cast<const char*>(&n), 4);
    os.write(reinterpret_cast<const char*>(&d), 4);
    for (Index i = 0; i < cloud.size(); ++i) {
        os.write(reinterpret_cast<const char*>(cloud.positions.row(i).data()),
                 3 * sizeof(double));
        if (d > 0)
            os.write(reinterpret_cast<const char*>(cloud.features.row(i).data()),
                     d * sizeof(double));
    }
    if (!os) throw IoError("write failed: " + path);
}

PointCloud read_cloud_pcld(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open point cloud: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "PCLD", 4) != 0)
        throw IoError("bad magic in " + path);
    std::uint32_t n = 0, d = 0;
    is.read(reinterpret_cast<char*>(&n), 4);
    is.read(reinterpret_cast<char*>(&d), 4);
    if (!is || n == 0) throw IoError("bad header in " + path);

    PointCloud cloud;
    cloud.positions.resize(n, 3);
    if (d > 0) cloud.features.resize(n, d);
    for (std::uint32_t i = 0; i < n; ++i) {
        is.read(reinterpret_cast<char*>(cloud.positions.row(i).data()), 3 * sizeof(double));
        if (d > 0)
            is.read(reinterpret_cast<char*>(cloud.features.row(i).data()),
                    d * sizeof(double));
    }
    if (!is) throw IoError("truncated point cloud: " + path);
    return cloud;
}

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& contents) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!os) throw IoError("write failed: " + path);
}

}  // namespace pcdistill::io
