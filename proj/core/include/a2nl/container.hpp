#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace a2nl {

enum class DType : std::uint8_t { f32 = 0, f64 = 1, i64 = 2 };

struct NamedArray {
    std::string name;
    DType dtype = DType::f32;
    std::vector<std::uint64_t> shape;
    std::vector<double> floats;       // used for f32/f64
    std::vector<std::int64_t> ints;   // used for i64

    std::uint64_t element_count() const;
    Eigen::MatrixXd as_matrix() const;  // 2-D float arrays
};

// Binary container of named arrays with an embedded config text. Header
// carries fixed magic bytes and a little-endian uint32 format version;
// payload arrays are row-major little-endian. Round-trips are bitwise.
struct ArrayContainer {
    static constexpr std::uint32_t kVersion = 1;

    std::string config_text;
    std::vector<NamedArray> arrays;

    NamedArray& add_matrix(const std::string& name, const Eigen::MatrixXd& m, DType dtype);
    NamedArray& add_scalar_i64(const std::string& name, std::int64_t value);

    bool has(const std::string& name) const;
    const NamedArray& find(const std::string& name) const;  // throws if missing
    std::int64_t get_i64(const std::string& name) const;

    void save(const std::string& path, const std::string& magic) const;
    static ArrayContainer load(const std::string& path, const std::string& magic);
};

inline constexpr const char* kCheckpointMagic = "A2NL";
inline constexpr const char* kDatasetMagic = "A2NLDS";

}  // namespace a2nl
