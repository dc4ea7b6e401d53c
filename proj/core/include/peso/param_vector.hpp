#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "peso/errors.hpp"
#include "peso/matrix.hpp"

namespace peso {

/// Flattened parameters partitioned into named, ordered groups.
/// The concatenation of all group values is the vector v; group boundaries
/// give the blockwise structure regularizers and metrics act on.
class ParamVector {
public:
    struct Group {
        std::string id;
        Vector values;
    };

    ParamVector() = default;
    explicit ParamVector(std::vector<Group> groups);

    static ParamVector zeros_like(const ParamVector& other);

    const std::vector<Group>& groups() const { return groups_; }
    std::vector<Group>& groups() { return groups_; }
    std::size_t group_count() const { return groups_.size(); }
    std::size_t total_dim() const { return total_dim_; }

    const Group& group(std::size_t g) const { return groups_[g]; }
    Group& group(std::size_t g) { return groups_[g]; }

    /// Index of the group with the given id; throws if absent.
    std::size_t index_of(const std::string& id) const;
    bool has_group(const std::string& id) const;

    /// Concatenation of all group values in declared order.
    Vector concatenated() const;

    /// Replaces values from a flat vector of length total_dim().
    void assign_concatenated(const Vector& flat);

    bool same_structure(const ParamVector& other) const;
    void require_same_structure(const ParamVector& other, const char* op) const;

    ParamVector& operator+=(const ParamVector& o);
    ParamVector& operator*=(double s);
    /// this += s * o, groupwise.
    void axpy(double s, const ParamVector& o);

    bool operator==(const ParamVector& o) const;

    double norm2() const;

private:
    void recompute_dim();

    std::vector<Group> groups_;
    std::size_t total_dim_ = 0;
};

/// A regrouping of a flat parameter vector: each plan group is a list of
/// indices into the concatenated vector. Lets the same softmax-KL machinery
/// run per module, per rank, or on any other partition.
struct GroupingPlan {
    struct PlanGroup {
        std::string id;
        std::vector<std::size_t> indices;
    };
    std::vector<PlanGroup> groups;
    std::size_t source_dim = 0;

    /// Identity plan: one plan group per ParamVector group, contiguous.
    static GroupingPlan per_module(const ParamVector& v);
};

}  // namespace peso
