#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dvf {

static_assert(std::endian::native == std::endian::little,
              "serialized formats are little-endian; big-endian hosts are unsupported");

/// Dense row-major float32 tensor. 4-D data is ordered (batch, channels, height, width);
/// lower ranks are allowed and use the trailing axes of that convention.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        v_.assign(static_cast<size_t>(checked_size(shape_)), 0.0f);
    }

    static Tensor full(std::vector<int> shape, float value) {
        Tensor t(std::move(shape));
        for (float& x : t.v_) x = value;
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int extent(int axis) const { return shape_[static_cast<size_t>(axis)]; }
    int64_t size() const { return static_cast<int64_t>(v_.size()); }

    float* data() { return v_.data(); }
    const float* data() const { return v_.data(); }

    float& operator[](int64_t i) { return v_[static_cast<size_t>(i)]; }
    float operator[](int64_t i) const { return v_[static_cast<size_t>(i)]; }

    // 4-D (b, c, y, x)
    float& at(int b, int c, int y, int x) { return v_[static_cast<size_t>(offset4(b, c, y, x))]; }
    float at(int b, int c, int y, int x) const { return v_[static_cast<size_t>(offset4(b, c, y, x))]; }
    // 3-D (c, y, x)
    float& at(int c, int y, int x) { return v_[static_cast<size_t>((int64_t(c) * shape_[1] + y) * shape_[2] + x)]; }
    float at(int c, int y, int x) const { return v_[static_cast<size_t>((int64_t(c) * shape_[1] + y) * shape_[2] + x)]; }
    // 2-D (y, x)
    float& at(int y, int x) { return v_[static_cast<size_t>(int64_t(y) * shape_[1] + x)]; }
    float at(int y, int x) const { return v_[static_cast<size_t>(int64_t(y) * shape_[1] + x)]; }

    // operator() is an alias for at() at every rank
    float& operator()(int b, int c, int y, int x) { return at(b, c, y, x); }
    float operator()(int b, int c, int y, int x) const { return at(b, c, y, x); }
    float& operator()(int c, int y, int x) { return at(c, y, x); }
    float operator()(int c, int y, int x) const { return at(c, y, x); }
    float& operator()(int y, int x) { return at(y, x); }
    float operator()(int y, int x) const { return at(y, x); }

    int64_t offset4(int b, int c, int y, int x) const {
        return ((int64_t(b) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x;
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (float x : v_)
            if (!std::isfinite(x)) return false;
        return true;
    }

    void fill(float value) {
        for (float& x : v_) x = value;
    }

    /// Reinterprets the extents; the element count must not change.
    void reshape(std::vector<int> shape) {
        if (checked_size(shape) != size())
            throw std::invalid_argument("reshape: element count mismatch (" + shape_string(shape_) +
                                        " -> " + shape_string(shape) + ")");
        shape_ = std::move(shape);
    }

    static std::string shape_string(const std::vector<int>& s) {
        std::string out = "(";
        for (size_t i = 0; i < s.size(); ++i) {
            if (i) out += "x";
            out += std::to_string(s[i]);
        }
        return out + ")";
    }

    std::string shape_string() const { return shape_string(shape_); }

private:
    static int64_t checked_size(const std::vector<int>& shape) {
        int64_t n = 1;
        for (int e : shape) {
            if (e < 1) throw std::invalid_argument("tensor extents must be >= 1, got " + shape_string(shape));
            n *= e;
        }
        return n;
    }

    std::vector<int> shape_;
    std::vector<float> v_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape_string() +
                                    " vs " + b.shape_string());
}

// ---------------------------------------------------------------------------
// Binary tensor format ("DVFT"): magic, u32 LE rank, rank u32 LE extents,
// float32 LE data in row-major order.
// Checkpoint format ("DVFW"): magic, u32 LE tensor count, then per tensor a
// u32 LE name length, the name bytes, and an embedded DVFT record.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_u32(std::ostream& os, uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}

inline uint32_t read_u32(std::istream& is, const char* what) {
    uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 4))
        throw std::runtime_error(std::string("truncated stream while reading ") + what +
                                 " at byte offset " + std::to_string(is.gcount() >= 0 ? (int64_t)is.tellg() : -1));
    return v;
}

} // namespace detail

inline void write_tensor(std::ostream& os, const Tensor& t) {
    os.write("DVFT", 4);
    detail::write_u32(os, static_cast<uint32_t>(t.rank()));
    for (int a = 0; a < t.rank(); ++a) detail::write_u32(os, static_cast<uint32_t>(t.extent(a)));
    os.write(reinterpret_cast<const char*>(t.data()), t.size() * 4);
}

inline Tensor read_tensor(std::istream& is) {
    char magic[4] = {};
    if (!is.read(magic, 4) || std::memcmp(magic, "DVFT", 4) != 0)
        throw std::runtime_error("bad tensor magic at byte offset 0 (expected \"DVFT\")");
    uint32_t rank = detail::read_u32(is, "tensor rank");
    if (rank == 0 || rank > 8)
        throw std::runtime_error("unreasonable tensor rank " + std::to_string(rank));
    std::vector<int> shape(rank);
    for (uint32_t a = 0; a < rank; ++a) {
        uint32_t e = detail::read_u32(is, "tensor extent");
        if (e == 0 || e > (1u << 28))
            throw std::runtime_error("bad tensor extent " + std::to_string(e));
        shape[a] = static_cast<int>(e);
    }
    Tensor t(shape);
    if (!is.read(reinterpret_cast<char*>(t.data()), t.size() * 4))
        throw std::runtime_error("truncated tensor data at byte offset " + std::to_string((int64_t)is.tellg()));
    return t;
}

inline void save_tensor(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    write_tensor(os, t);
    if (!os) throw std::runtime_error("write failed: " + path);
}

inline Tensor load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    return read_tensor(is);
}

/// Ordered name -> tensor map; order is part of the serialized layout.
struct NamedTensors {
    std::vector<std::pair<std::string, Tensor>> items;

    void add(std::string name, Tensor t) { items.emplace_back(std::move(name), std::move(t)); }

    const Tensor& get(const std::string& name) const {
        for (const auto& [n, t] : items)
            if (n == name) return t;
        throw std::invalid_argument("checkpoint has no tensor named \"" + name + "\"");
    }

    bool contains(const std::string& name) const {
        for (const auto& [n, t] : items)
            if (n == name) return true;
        return false;
    }
};

inline void write_tensors(std::ostream& os, const NamedTensors& m) {
    os.write("DVFW", 4);
    detail::write_u32(os, static_cast<uint32_t>(m.items.size()));
    for (const auto& [name, t] : m.items) {
        detail::write_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_tensor(os, t);
    }
}

inline NamedTensors read_tensors(std::istream& is) {
    char magic[4] = {};
    if (!is.read(magic, 4) || std::memcmp(magic, "DVFW", 4) != 0)
        throw std::runtime_error("bad checkpoint magic at byte offset 0 (expected \"DVFW\")");
    uint32_t count = detail::read_u32(is, "tensor count");
    if (count > (1u << 20)) throw std::runtime_error("unreasonable checkpoint tensor count");
    NamedTensors m;
    m.items.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t len = detail::read_u32(is, "name length");
        if (len > (1u << 16)) throw std::runtime_error("unreasonable tensor name length");
        std::string name(len, '\0');
        if (!is.read(name.data(), len))
            throw std::runtime_error("truncated tensor name at byte offset " + std::to_string((int64_t)is.tellg()));
        m.add(std::move(name), read_tensor(is));
    }
    return m;
}

inline void save_tensors(const std::string& path, const NamedTensors& m) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    write_tensors(os, m);
    if (!os) throw std::runtime_error("write failed: " + path);
}

inline NamedTensors load_tensors(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    return read_tensors(is);
}

} // namespace dvf
