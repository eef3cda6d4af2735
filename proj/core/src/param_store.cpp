#include "pcdistill/param_store.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "pcdistill/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian");

namespace pcdistill::diff {

namespace {

constexpr char kMagic[4] = {'P', 'D', 'K', 'P'};

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError("checkpoint: truncated file");
    return v;
}

}  // namespace

DiffNode ParamStore::create(const std::string& name, Mat init) {
    if (params_.count(name)) throw StateError("ParamStore: duplicate parameter " + name);
    DiffNode p = DiffNode::param(std::move(init));
    params_.emplace(name, p);
    return p;
}

DiffNode ParamStore::create_normal(const std::string& name, Index rows, Index cols,
                                   double stddev, Rng& rng) {
    Mat m(rows, cols);
    for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < cols; ++c) m(r, c) = stddev * rng.normal();
    return create(name, std::move(m));
}

DiffNode ParamStore::create_zeros(const std::string& name, Index rows, Index cols) {
    return create(name, Mat::Zero(rows, cols));
}

DiffNode ParamStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw StateError("ParamStore: unknown parameter " + name);
    return it->second;
}

std::int64_t ParamStore::scalar_count() const {
    std::int64_t n = 0;
    for (const auto& [name, p] : params_) n += p.value().size();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
}

void ParamStore::sgd_step(double lr) {
    for (auto& [name, p] : params_) {
        if (!p.has_grad()) throw StateError("sgd_step: missing gradient for " + name);
        p.mutable_value() -= lr * p.grad();
    }
    zero_grad();
}

void ParamStore::adam_step(double lr) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ++adam_t_;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(adam_t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(adam_t_));
    for (auto& [name, p] : params_) {
        if (!p.has_grad()) throw StateError("adam_step: missing gradient for " + name);
        AdamState& st = adam_[name];
        if (st.m.size() == 0) {
            st.m = Mat::Zero(p.rows(), p.cols());
            st.v = Mat::Zero(p.rows(), p.cols());
        }
        const Mat& g = p.grad();
        st.m = b1 * st.m + (1.0 - b1) * g;
        st.v = b2 * st.v + (1.0 - b2) * g.cwiseProduct(g);
        Mat mhat = st.m / c1;
        Mat vhat = st.v / c2;
        p.mutable_value() -=
            (lr * mhat.array() / (vhat.array().sqrt() + eps)).matrix();
    }
    zero_grad();
}

void ParamStore::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("checkpoint: cannot open for writing: " + path);
    os.write(kMagic, 4);
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(params_.size()));
    for (const auto& [name, p] : params_) {
        write_pod<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(p.rows()));
        write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(p.cols()));
        os.write(reinterpret_cast<const char*>(p.value().data()),
                 static_cast<std::streamsize>(sizeof(double) * p.value().size()));
    }
    if (!os) throw IoError("checkpoint: write failed: " + path);
}

void ParamStore::copy_values_from(const ParamStore& other) {
    for (auto& [name, p] : params_) {
        auto it = other.params_.find(name);
        if (it == other.params_.end())
            throw StateError("copy_values_from: missing parameter " + name);
        if (it->second.rows() != p.rows() || it->second.cols() != p.cols())
            throw IoError("copy_values_from: shape mismatch for " + name);
        p.mutable_value() = it->second.value();
    }
}

void ParamStore::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checkpoint: cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw IoError("checkpoint: bad magic in " + path);
    const auto count = read_pod<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = read_pod<std::uint16_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const auto rows = read_pod<std::uint32_t>(is);
        const auto cols = read_pod<std::uint32_t>(is);
        Mat m(rows, cols);
        is.read(reinterpret_cast<char*>(m.data()),
                static_cast<std::streamsize>(sizeof(double) * m.size()));
        if (!is) throw IoError("checkpoint: truncated parameter " + name);
        auto it = params_.find(name);
        if (it == params_.end()) {
            create(name, std::move(m));
        } else {
            if (it->second.rows() != m.rows() || it->second.cols() != m.cols())
                throw IoError("checkpoint: shape mismatch for " + name);
            it->second.mutable_value() = std::move(m);
        }
    }
}

}  // namespace pcdistill::diff
