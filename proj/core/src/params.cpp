#include "a2nl/params.hpp"

#include <stdexcept>

namespace a2nl {

std::size_t ParamStore::add(std::string name, Eigen::Index rows, Eigen::Index cols) {
    if (rows < 1 || cols < 1) {
        throw std::invalid_argument("ParamStore::add: non-positive shape for '" + name + "'");
    }
    if (has(name)) {
        throw std::invalid_argument("ParamStore::add: duplicate group '" + name + "'");
    }
    Entry e{std::move(name), data_.size(), rows, cols};
    data_.resize(data_.size() + static_cast<std::size_t>(rows * cols), 0.0);
    entries_.push_back(std::move(e));
    return entries_.size() - 1;
}

MatRef ParamStore::view(std::size_t idx) {
    const Entry& e = entries_.at(idx);
    return MatRef(data_.data() + e.offset, e.rows, e.cols);
}

ConstMatRef ParamStore::view(std::size_t idx) const {
    const Entry& e = entries_.at(idx);
    return ConstMatRef(data_.data() + e.offset, e.rows, e.cols);
}

MatRef ParamStore::view(std::string_view name) { return view(index_of(name)); }

ConstMatRef ParamStore::view(std::string_view name) const { return view(index_of(name)); }

bool ParamStore::has(std::string_view name) const {
    for (const Entry& e : entries_) {
        if (e.name == name) return true;
    }
    return false;
}

std::size_t ParamStore::index_of(std::string_view name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].name == name) return i;
    }
    throw std::invalid_argument("ParamStore: unknown group '" + std::string(name) + "'");
}

}  // namespace a2nl
