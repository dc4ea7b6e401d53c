#include "peso/adapters.hpp"

#include <unordered_map>

#include "peso/linalg.hpp"

namespace peso {

namespace {

const std::unordered_map<std::string, Policy>& policy_table() {
    static const std::unordered_map<std::string, Policy> table = {
        {"single_evolving", Policy::SingleEvolving},
        {"sum_all", Policy::SumAll},
        {"sum_latest", Policy::SumLatest},
        {"sum_all_inherit", Policy::SumAllInherit},
        {"sum_latest_inherit", Policy::SumLatestInherit},
        {"sd_all", Policy::SdAll},
        {"sd_latest", Policy::SdLatest},
        {"sd_all_inherit", Policy::SdAllInherit},
        {"sd_latest_inherit", Policy::SdLatestInherit},
        {"inf_all", Policy::InfAll},
        {"inf_latest", Policy::InfLatest},
        {"inf_all_inherit", Policy::InfAllInherit},
        {"inf_latest_inherit", Policy::InfLatestInherit},
        {"peso", Policy::Peso},
    };
    return table;
}

}  // namespace

PolicyFamily policy_family(Policy p) {
    switch (p) {
        case Policy::SingleEvolving:
            return PolicyFamily::Single;
        case Policy::SumAll:
        case Policy::SumLatest:
        case Policy::SumAllInherit:
        case Policy::SumLatestInherit:
            return PolicyFamily::Sum;
        case Policy::SdAll:
        case Policy::SdLatest:
        case Policy::SdAllInherit:
        case Policy::SdLatestInherit:
            return PolicyFamily::Sd;
        case Policy::InfAll:
        case Policy::InfLatest:
        case Policy::InfAllInherit:
        case Policy::InfLatestInherit:
            return PolicyFamily::Inf;
        case Policy::Peso:
            return PolicyFamily::Peso;
    }
    throw PreconditionError("unknown policy");
}

bool policy_is_cumulative(Policy p) {
    const PolicyFamily f = policy_family(p);
    return f == PolicyFamily::Sum || f == PolicyFamily::Sd || f == PolicyFamily::Inf;
}

bool policy_latest_only(Policy p) {
    switch (p) {
        case Policy::SumLatest:
        case Policy::SumLatestInherit:
        case Policy::SdLatest:
        case Policy::SdLatestInherit:
        case Policy::InfLatest:
        case Policy::InfLatestInherit:
            return true;
        default:
            return false;
    }
}

bool policy_inherits(Policy p) {
    switch (p) {
        case Policy::SingleEvolving:
        case Policy::Peso:
        case Policy::SumAllInherit:
        case Policy::SumLatestInherit:
        case Policy::SdAllInherit:
        case Policy::SdLatestInherit:
        case Policy::InfAllInherit:
        case Policy::InfLatestInherit:
            return true;
        default:
            return false;
    }
}

bool policy_normalizes_frozen(Policy p) {
    const PolicyFamily f = policy_family(p);
    return f == PolicyFamily::Sum || f == PolicyFamily::Sd;
}

bool policy_trains_magnitudes(Policy p) { return policy_family(p) == PolicyFamily::Sd; }

bool policy_fixes_a(Policy p) { return policy_family(p) == PolicyFamily::Inf; }

Policy parse_policy(const std::string& name) {
    const auto& table = policy_table();
    const auto it = table.find(name);
    if (it == table.end()) throw PreconditionError("unknown policy: " + name);
    return it->second;
}

std::string policy_name(Policy p) {
    for (const auto& [name, policy] : policy_table())
        if (policy == p) return name;
    throw PreconditionError("unknown policy");
}

Matrix effective_delta(const AdapterStack& stack) {
    const LoraAdapter& live = stack.live;
    if (live.a.rows() != live.b.cols())
        throw PreconditionError("effective_delta: live factor ranks disagree");
    Matrix delta = matmul(live.b, live.a);

    if (policy_is_cumulative(stack.policy) && !stack.frozen.empty()) {
        const std::size_t first =
            policy_latest_only(stack.policy) ? stack.frozen.size() - 1 : 0;
        for (std::size_t i = first; i < stack.frozen.size(); ++i) {
            const FrozenEntry& e = stack.frozen[i];
            if (e.b_hat.cols() != e.a_hat.rows())
                throw PreconditionError("effective_delta: frozen factor ranks disagree");
            if (e.alpha == 0.0) continue;
            const Matrix term = matmul(e.b_hat, e.a_hat);
            if (term.rows() != delta.rows() || term.cols() != delta.cols())
                throw PreconditionError("effective_delta: frozen shape mismatch");
            delta += e.alpha * term;
        }
    }
    return delta;
}

AdapterStack seal_stage(const AdapterStack& stack, const LoraAdapter& trained, bool inherit,
                        const SealOptions& options, std::mt19937_64& engine) {
    if (trained.a.rows() != stack.live.a.rows() || trained.a.cols() != stack.live.a.cols() ||
        trained.b.rows() != stack.live.b.rows() || trained.b.cols() != stack.live.b.cols())
        throw PreconditionError("seal_stage: trained adapter shape mismatch");

    AdapterStack next = stack;
    next.live = trained;

    if (policy_is_cumulative(stack.policy)) {
        FrozenEntry entry;
        if (policy_normalizes_frozen(stack.policy)) {
            const double na = trained.a.frobenius_norm();
            const double nb = trained.b.frobenius_norm();
            if (na == 0.0 || nb == 0.0)
                throw NumericError("seal_stage: cannot normalize zero-norm factor");
            entry.a_hat = (1.0 / na) * trained.a;
            entry.b_hat = (1.0 / nb) * trained.b;
            if (policy_trains_magnitudes(stack.policy))
                entry.alpha =
                    options.sd_alpha_mode == SdAlphaMode::PaperInit ? 1.0 : na * nb;
            else
                entry.alpha = na * nb;  // function-preserving fixed magnitude
        } else {
            entry.a_hat = trained.a;
            entry.b_hat = trained.b;
            entry.alpha = 1.0;
        }
        if (options.trim_history && policy_latest_only(stack.policy)) next.frozen.clear();
        next.frozen.push_back(std::move(entry));
    }

    if (inherit) {
        next.live = trained;
        next.live.a_trainable = true;
    } else {
        std::normal_distribution<double> gauss(0.0, options.fresh_init_std);
        next.live.a = Matrix(trained.a.rows(), trained.a.cols());
        for (double& v : next.live.a.flat()) v = gauss(engine);
        next.live.b = Matrix(trained.b.rows(), trained.b.cols());
        next.live.a_trainable = true;
    }
    return next;
}

LoraAdapter inflora_init(const std::string& site_id, const std::vector<Vector>& inputs,
                         std::size_t rank, std::size_t d_out) {
    if (inputs.size() < rank)
        throw PreconditionError("inflora_init: need at least rank inputs");
    const std::size_t d_in = inputs.front().size();
    for (const Vector& x : inputs)
        if (x.size() != d_in) throw PreconditionError("inflora_init: inconsistent input dims");

    Matrix cov(d_in, d_in);
    for (const Vector& x : inputs)
        for (std::size_t i = 0; i < d_in; ++i)
            for (std::size_t j = 0; j < d_in; ++j) cov(i, j) += x[i] * x[j];
    cov *= 1.0 / static_cast<double>(inputs.size());

    const linalg::EigenPairs ep = linalg::sym_eig(cov);
    LoraAdapter adapter;
    adapter.site_id = site_id;
    adapter.rank = rank;
    adapter.a = Matrix(rank, d_in);
    for (std::size_t r = 0; r < rank; ++r)
        for (std::size_t j = 0; j < d_in; ++j) adapter.a(r, j) = ep.vectors(j, r);
    adapter.b = Matrix(d_out, rank);
    adapter.a_trainable = false;
    return adapter;
}

ParamVector pack(const std::vector<AdapterStack>& stacks) {
    std::vector<ParamVector::Group> groups;
    groups.reserve(stacks.size() * 2);
    for (const AdapterStack& s : stacks) {
        groups.push_back({s.site_id + ".A", s.live.a.flat()});
        groups.push_back({s.site_id + ".B", s.live.b.flat()});
    }
    return ParamVector(std::move(groups));
}

void unpack(const ParamVector& v, std::vector<AdapterStack>& stacks) {
    if (v.group_count() != stacks.size() * 2)
        throw PreconditionError("unpack: group count does not match stacks");
    std::size_t g = 0;
    for (AdapterStack& s : stacks) {
        const ParamVector::Group& ga = v.group(g++);
        const ParamVector::Group& gb = v.group(g++);
        if (ga.id != s.site_id + ".A" || gb.id != s.site_id + ".B")
            throw PreconditionError("unpack: group ids out of order for site " + s.site_id);
        if (ga.values.size() != s.live.a.size() || gb.values.size() != s.live.b.size())
            throw PreconditionError("unpack: group sizes do not match factors");
        s.live.a.flat() = ga.values;
        s.live.b.flat() = gb.values;
    }
}

}  // namespace peso
