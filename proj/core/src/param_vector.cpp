#include "peso/param_vector.hpp"

#include <cmath>
#include <unordered_set>

namespace peso {

ParamVector::ParamVector(std::vector<Group> groups) : groups_(std::move(groups)) {
    std::unordered_set<std::string> seen;
    for (const Group& g : groups_)
        if (!seen.insert(g.id).second)
            throw PreconditionError("ParamVector: duplicate group id " + g.id);
    recompute_dim();
}

ParamVector ParamVector::zeros_like(const ParamVector& other) {
    ParamVector z = other;
    for (Group& g : z.groups_) std::fill(g.values.begin(), g.values.end(), 0.0);
    return z;
}

std::size_t ParamVector::index_of(const std::string& id) const {
    for (std::size_t i = 0; i < groups_.size(); ++i)
        if (groups_[i].id == id) return i;
    throw PreconditionError("ParamVector: no group named " + id);
}

bool ParamVector::has_group(const std::string& id) const {
    for (const Group& g : groups_)
        if (g.id == id) return true;
    return false;
}

Vector ParamVector::concatenated() const {
    Vector flat;
    flat.reserve(total_dim_);
    for (const Group& g : groups_) flat.insert(flat.end(), g.values.begin(), g.values.end());
    return flat;
}

void ParamVector::assign_concatenated(const Vector& flat) {
    if (flat.size() != total_dim_)
        throw PreconditionError("ParamVector::assign_concatenated: length mismatch");
    std::size_t off = 0;
    for (Group& g : groups_) {
        std::copy(flat.begin() + off, flat.begin() + off + g.values.size(), g.values.begin());
        off += g.values.size();
    }
}

bool ParamVector::same_structure(const ParamVector& other) const {
    if (groups_.size() != other.groups_.size()) return false;
    for (std::size_t i = 0; i < groups_.size(); ++i)
        if (groups_[i].id != other.groups_[i].id ||
            groups_[i].values.size() != other.groups_[i].values.size())
            return false;
    return true;
}

void ParamVector::require_same_structure(const ParamVector& other, const char* op) const {
    if (!same_structure(other))
        throw PreconditionError(std::string(op) + ": group structures differ");
}

ParamVector& ParamVector::operator+=(const ParamVector& o) {
    require_same_structure(o, "ParamVector::operator+=");
    for (std::size_t g = 0; g < groups_.size(); ++g)
        for (std::size_t i = 0; i < groups_[g].values.size(); ++i)
            groups_[g].values[i] += o.groups_[g].values[i];
    return *this;
}

ParamVector& ParamVector::operator*=(double s) {
    for (Group& g : groups_)
        for (double& v : g.values) v *= s;
    return *this;
}

void ParamVector::axpy(double s, const ParamVector& o) {
    require_same_structure(o, "ParamVector::axpy");
    for (std::size_t g = 0; g < groups_.size(); ++g)
        for (std::size_t i = 0; i < groups_[g].values.size(); ++i)
            groups_[g].values[i] += s * o.groups_[g].values[i];
}

bool ParamVector::operator==(const ParamVector& o) const {
    if (!same_structure(o)) return false;
    for (std::size_t g = 0; g < groups_.size(); ++g)
        if (groups_[g].values != o.groups_[g].values) return false;
    return true;
}

double ParamVector::norm2() const {
    double s = 0.0;
    for (const Group& g : groups_)
        for (double v : g.values) s += v * v;
    return std::sqrt(s);
}

void ParamVector::recompute_dim() {
    total_dim_ = 0;
    for (const Group& g : groups_) total_dim_ += g.values.size();
}

GroupingPlan GroupingPlan::per_module(const ParamVector& v) {
    GroupingPlan plan;
    plan.source_dim = v.total_dim();
    std::size_t off = 0;
    for (const ParamVector::Group& g : v.groups()) {
        PlanGroup pg;
        pg.id = g.id;
        pg.indices.resize(g.values.size());
        for (std::size_t i = 0; i < g.values.size(); ++i) pg.indices[i] = off + i;
        plan.groups.push_back(std::move(pg));
        off += g.values.size();
    }
    return plan;
}

}  // namespace peso
