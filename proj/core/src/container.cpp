#include "a2nl/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace a2nl {

namespace {

static_assert(std::endian::native == std::endian::little,
              "container serialization assumes a little-endian host");

template <class T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw std::runtime_error("container: truncated file");
    return v;
}

void write_string(std::ostream& os, const std::string& s) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
    const auto len = read_pod<std::uint32_t>(is);
    std::string s(len, '\0');
    is.read(s.data(), len);
    if (!is) throw std::runtime_error("container: truncated string");
    return s;
}

}  // namespace

std::uint64_t NamedArray::element_count() const {
    std::uint64_t n = 1;
    for (const auto d : shape) n *= d;
    return n;
}

Eigen::MatrixXd NamedArray::as_matrix() const {
    if (dtype == DType::i64 || shape.size() != 2) {
        throw std::runtime_error("NamedArray: '" + name + "' is not a 2-D float array");
    }
    Eigen::MatrixXd m(static_cast<Eigen::Index>(shape[0]), static_cast<Eigen::Index>(shape[1]));
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            m(i, j) = floats[k++];
        }
    }
    return m;
}

NamedArray& ArrayContainer::add_matrix(const std::string& name, const Eigen::MatrixXd& m,
                                       DType dtype) {
    if (dtype == DType::i64) throw std::invalid_argument("add_matrix: use float dtypes");
    NamedArray arr;
    arr.name = name;
    arr.dtype = dtype;
    arr.shape = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
    arr.floats.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            arr.floats.push_back(m(i, j));
        }
    }
    arrays.push_back(std::move(arr));
    return arrays.back();
}

NamedArray& ArrayContainer::add_scalar_i64(const std::string& name, std::int64_t value) {
    NamedArray arr;
    arr.name = name;
    arr.dtype = DType::i64;
    arr.shape = {1};
    arr.ints = {value};
    arrays.push_back(std::move(arr));
    return arrays.back();
}

bool ArrayContainer::has(const std::string& name) const {
    for (const auto& a : arrays) {
        if (a.name == name) return true;
    }
    return false;
}

const NamedArray& ArrayContainer::find(const std::string& name) const {
    for (const auto& a : arrays) {
        if (a.name == name) return a;
    }
    throw std::runtime_error("container: missing array '" + name + "'");
}

std::int64_t ArrayContainer::get_i64(const std::string& name) const {
    const NamedArray& a = find(name);
    if (a.dtype != DType::i64 || a.ints.size() != 1) {
        throw std::runtime_error("container: '" + name + "' is not a scalar int");
    }
    return a.ints[0];
}

void ArrayContainer::save(const std::string& path, const std::string& magic) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("container: cannot open '" + path + "' for writing");

    os.write(magic.data(), static_cast<std::streamsize>(magic.size()));
    write_pod<std::uint32_t>(os, kVersion);
    write_string(os, config_text);

    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(arrays.size()));
    for (const auto& a : arrays) {
        write_string(os, a.name);
        write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(a.dtype));
        write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(a.shape.size()));
        for (const auto d : a.shape) write_pod<std::uint64_t>(os, d);
    }
    for (const auto& a : arrays) {
        switch (a.dtype) {
            case DType::f32:
                for (const double v : a.floats) write_pod<float>(os, static_cast<float>(v));
                break;
            case DType::f64:
                for (const double v : a.floats) write_pod<double>(os, v);
                break;
            case DType::i64:
                for (const auto v : a.ints) write_pod<std::int64_t>(os, v);
                break;
        }
    }
    if (!os) throw std::runtime_error("container: write failed for '" + path + "'");
}

ArrayContainer ArrayContainer::load(const std::string& path, const std::string& magic) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("container: cannot open '" + path + "'");

    std::string got(magic.size(), '\0');
    is.read(got.data(), static_cast<std::streamsize>(magic.size()));
    if (!is || got != magic) {
        throw std::runtime_error("container: bad magic in '" + path + "'");
    }
    const auto version = read_pod<std::uint32_t>(is);
    if (version != kVersion) {
        throw std::runtime_error("container: unsupported format version " +
                                 std::to_string(version) + " in '" + path + "'");
    }

    ArrayContainer c;
    c.config_text = read_string(is);
    const auto count = read_pod<std::uint32_t>(is);
    c.arrays.resize(count);
    for (auto& a : c.arrays) {
        a.name = read_string(is);
        const auto dt = read_pod<std::uint8_t>(is);
        if (dt > 2) throw std::runtime_error("container: unknown dtype");
        a.dtype = static_cast<DType>(dt);
        const auto ndim = read_pod<std::uint32_t>(is);
        a.shape.resize(ndim);
        for (auto& d : a.shape) d = read_pod<std::uint64_t>(is);
    }
    for (auto& a : c.arrays) {
        const std::uint64_t n = a.element_count();
        switch (a.dtype) {
            case DType::f32:
                a.floats.resize(n);
                for (auto& v : a.floats) v = static_cast<double>(read_pod<float>(is));
                break;
            case DType::f64:
                a.floats.resize(n);
                for (auto& v : a.floats) v = read_pod<double>(is);
                break;
            case DType::i64:
                a.ints.resize(n);
                for (auto& v : a.ints) v = read_pod<std::int64_t>(is);
                break;
        }
    }
    return c;
}

}  // namespace a2nl
