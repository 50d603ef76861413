#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace a2nl {

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatRef = Eigen::Map<MatrixRM>;
using ConstMatRef = Eigen::Map<const MatrixRM>;

// Named parameter groups backed by one flat double buffer. The flat layout is
// what the optimizer, the finite-difference checks, and the checkpoint writer
// all operate on; matrix views are row-major so serialization is a plain copy.
class ParamStore {
public:
    struct Entry {
        std::string name;
        std::size_t offset;
        Eigen::Index rows;
        Eigen::Index cols;
    };

    // Registers a group filled with zeros and returns its index.
    std::size_t add(std::string name, Eigen::Index rows, Eigen::Index cols);

    MatRef view(std::size_t idx);
    ConstMatRef view(std::size_t idx) const;
    MatRef view(std::string_view name);
    ConstMatRef view(std::string_view name) const;

    bool has(std::string_view name) const;
    std::size_t index_of(std::string_view name) const;  // throws if missing

    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t size() const { return data_.size(); }

    std::vector<double>& flat() { return data_; }
    const std::vector<double>& flat() const { return data_; }

private:
    std::vector<double> data_;
    std::vector<Entry> entries_;
};

// Gradient buffer matching a ParamStore layout.
class GradStore {
public:
    explicit GradStore(const ParamStore& params)
        : params_(&params), data_(params.size(), 0.0) {}

    void zero() { std::fill(data_.begin(), data_.end(), 0.0); }

    MatRef view(std::size_t idx) {
        const auto& e = params_->entries()[idx];
        return MatRef(data_.data() + e.offset, e.rows, e.cols);
    }
    MatRef view(std::string_view name) { return view(params_->index_of(name)); }

    std::vector<double>& flat() { return data_; }
    const std::vector<double>& flat() const { return data_; }

private:
    const ParamStore* params_;
    std::vector<double> data_;
};

}  // namespace a2nl
