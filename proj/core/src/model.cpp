#include "peso/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "peso/rng.hpp"

namespace peso {

namespace {

Vector tanh_vec(const Vector& x) {
    Vector y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
    return y;
}

const AdapterStack& site(const std::vector<AdapterStack>& stacks, const std::string& id) {
    for (const AdapterStack& s : stacks)
        if (s.site_id == id) return s;
    throw PreconditionError("missing adapter site " + id);
}

AdapterStack& site(std::vector<AdapterStack>& stacks, const std::string& id) {
    for (AdapterStack& s : stacks)
        if (s.site_id == id) return s;
    throw PreconditionError("missing adapter site " + id);
}

// Frozen entries contributing to the effective delta (and to SD gradients).
std::pair<std::size_t, std::size_t> contributing_range(const AdapterStack& stack) {
    if (!policy_is_cumulative(stack.policy) || stack.frozen.empty()) return {0, 0};
    if (policy_latest_only(stack.policy)) return {stack.frozen.size() - 1, stack.frozen.size()};
    return {0, stack.frozen.size()};
}

Matrix reshape(const Vector& flat, std::size_t rows, std::size_t cols) {
    return Matrix::from_rows(rows, cols, flat);
}

}  // namespace

std::size_t ToyRecModel::vocab_size() const {
    std::size_t v = 0;
    for (std::size_t k : codebook_sizes) v += k;
    return v;
}

ToyRecModel init_model(const CodeBook& book, std::size_t hidden, std::uint64_t seed) {
    ToyRecModel m;
    m.hidden = hidden;
    m.codebook_sizes = book.codebook_sizes;
    m.token_offsets.resize(book.code_len);
    for (std::size_t j = 0; j < book.code_len; ++j) m.token_offsets[j] = book.token_offset(j);

    std::mt19937_64 engine(seed);
    const double w_std = 1.0 / std::sqrt(static_cast<double>(hidden));
    std::normal_distribution<double> embed_init(0.0, 0.5);
    std::normal_distribution<double> w_init(0.0, w_std);

    m.embed = Matrix(m.vocab_size(), hidden);
    for (double& v : m.embed.flat()) v = embed_init(engine);
    m.w_enc = Matrix(hidden, hidden);
    for (double& v : m.w_enc.flat()) v = w_init(engine);
    m.w_dec = Matrix(hidden, hidden);
    for (double& v : m.w_dec.flat()) v = w_init(engine);
    m.w_out.resize(book.code_len);
    for (std::size_t j = 0; j < book.code_len; ++j) {
        m.w_out[j] = Matrix(m.codebook_sizes[j], hidden);
        for (double& v : m.w_out[j].flat()) v = w_init(engine);
    }
    return m;
}

std::vector<AdapterStack> init_stacks(const ToyRecModel& model, std::size_t rank, Policy policy,
                                      double init_std, std::mt19937_64& engine) {
    std::normal_distribution<double> gauss(0.0, init_std);
    std::vector<AdapterStack> stacks;
    for (const char* id : {"enc", "dec"}) {
        AdapterStack s;
        s.site_id = id;
        s.policy = policy;
        s.live.site_id = id;
        s.live.rank = rank;
        s.live.a = Matrix(rank, model.hidden);
        for (double& v : s.live.a.flat()) v = gauss(engine);
        s.live.b = Matrix(model.hidden, rank);
        stacks.push_back(std::move(s));
    }
    return stacks;
}

EffectiveWeights effective_weights(const ToyRecModel& model,
                                   const std::vector<AdapterStack>& stacks) {
    EffectiveWeights eff;
    eff.m_enc = model.w_enc + effective_delta(site(stacks, "enc"));
    eff.m_dec = model.w_dec + effective_delta(site(stacks, "dec"));
    return eff;
}

ForwardTrace forward(const ToyRecModel& model, const EffectiveWeights& eff, const CodeBook& book,
                     const std::vector<std::size_t>& history_items, const ItemCode& target) {
    if (history_items.empty()) throw PreconditionError("forward: empty history");
    const std::size_t L = model.code_len();
    const std::size_t d = model.hidden;

    const std::size_t start =
        history_items.size() > kHistoryWindow ? history_items.size() - kHistoryWindow : 0;

    ForwardTrace tr;
    tr.h.assign(d, 0.0);
    std::size_t n_tokens = 0;
    for (std::size_t idx = start; idx < history_items.size(); ++idx) {
        const ItemCode& code = book.code_of(history_items[idx]);
        for (std::size_t j = 0; j < L; ++j) {
            const std::size_t row = model.token_offsets[j] + code.tokens[j];
            for (std::size_t c = 0; c < d; ++c) tr.h[c] += model.embed(row, c);
            ++n_tokens;
        }
    }
    for (double& v : tr.h) v /= static_cast<double>(n_tokens);

    tr.states.resize(L);
    tr.inputs.resize(L >= 1 ? L - 1 : 0);
    tr.logits.resize(L);

    tr.states[0] = tanh_vec(matvec(eff.m_enc, tr.h));
    for (std::size_t j = 0; j < L; ++j) {
        tr.logits[j] = matvec(model.w_out[j], tr.states[j]);
        if (j + 1 < L) {
            const std::size_t row = model.token_offsets[j] + target.tokens[j];
            Vector a(d);
            for (std::size_t c = 0; c < d; ++c) a[c] = tr.states[j][c] + model.embed(row, c);
            tr.inputs[j] = a;
            tr.states[j + 1] = tanh_vec(matvec(eff.m_dec, a));
        }
    }
    return tr;
}

std::vector<TrainableRef> trainable_refs(const ToyRecModel& model,
                                         const std::vector<AdapterStack>& stacks,
                                         std::size_t stage_index) {
    std::vector<TrainableRef> refs;
    using Kind = TrainableRef::Kind;
    if (stage_index <= 1) {
        refs.push_back({Kind::Embed, 0, "embed"});
        refs.push_back({Kind::WEnc, 0, "w_enc"});
        refs.push_back({Kind::WDec, 0, "w_dec"});
        for (std::size_t j = 0; j < model.code_len(); ++j)
            refs.push_back({Kind::WOut, j, "w_out" + std::to_string(j)});
    }
    for (std::size_t s = 0; s < stacks.size(); ++s) {
        if (stage_index <= 1 || stacks[s].live.a_trainable)
            refs.push_back({Kind::LoraA, s, stacks[s].site_id + ".A"});
        refs.push_back({Kind::LoraB, s, stacks[s].site_id + ".B"});
    }
    if (stage_index >= 2) {
        for (std::size_t s = 0; s < stacks.size(); ++s) {
            if (!policy_trains_magnitudes(stacks[s].policy)) continue;
            const auto [first, last] = contributing_range(stacks[s]);
            if (first < last) refs.push_back({Kind::SdAlpha, s, stacks[s].site_id + ".alpha"});
        }
    }
    return refs;
}

ParamVector snapshot_params(const ToyRecModel& model, const std::vector<AdapterStack>& stacks,
                            const std::vector<TrainableRef>& refs) {
    using Kind = TrainableRef::Kind;
    std::vector<ParamVector::Group> groups;
    groups.reserve(refs.size());
    for (const TrainableRef& r : refs) {
        switch (r.kind) {
            case Kind::Embed:
                groups.push_back({r.group_id, model.embed.flat()});
                break;
            case Kind::WEnc:
                groups.push_back({r.group_id, model.w_enc.flat()});
                break;
            case Kind::WDec:
                groups.push_back({r.group_id, model.w_dec.flat()});
                break;
            case Kind::WOut:
                groups.push_back({r.group_id, model.w_out[r.index].flat()});
                break;
            case Kind::LoraA:
                groups.push_back({r.group_id, stacks[r.index].live.a.flat()});
                break;
            case Kind::LoraB:
                groups.push_back({r.group_id, stacks[r.index].live.b.flat()});
                break;
            case Kind::SdAlpha: {
                const auto [first, last] = contributing_range(stacks[r.index]);
                Vector alphas;
                for (std::size_t i = first; i < last; ++i)
                    alphas.push_back(stacks[r.index].frozen[i].alpha);
                groups.push_back({r.group_id, std::move(alphas)});
                break;
            }
        }
    }
    return ParamVector(std::move(groups));
}

void assign_params(ToyRecModel& model, std::vector<AdapterStack>& stacks,
                   const std::vector<TrainableRef>& refs, const ParamVector& values) {
    using Kind = TrainableRef::Kind;
    if (values.group_count() != refs.size())
        throw PreconditionError("assign_params: group count does not match refs");
    for (std::size_t g = 0; g < refs.size(); ++g) {
        const TrainableRef& r = refs[g];
        const Vector& v = values.group(g).values;
        if (values.group(g).id != r.group_id)
            throw PreconditionError("assign_params: group order mismatch");
        switch (r.kind) {
            case Kind::Embed:
                model.embed.flat() = v;
                break;
            case Kind::WEnc:
                model.w_enc.flat() = v;
                break;
            case Kind::WDec:
                model.w_dec.flat() = v;
                break;
            case Kind::WOut:
                model.w_out[r.index].flat() = v;
                break;
            case Kind::LoraA:
                stacks[r.index].live.a.flat() = v;
                break;
            case Kind::LoraB:
                stacks[r.index].live.b.flat() = v;
                break;
            case Kind::SdAlpha: {
                const auto [first, last] = contributing_range(stacks[r.index]);
                if (v.size() != last - first)
                    throw PreconditionError("assign_params: alpha count mismatch");
                for (std::size_t i = first; i < last; ++i)
                    stacks[r.index].frozen[i].alpha = v[i - first];
                break;
            }
        }
    }
}

Vector sd_magnitude_grad(const AdapterStack& stack, const Matrix& upstream) {
    if (!policy_trains_magnitudes(stack.policy))
        throw PreconditionError("sd_magnitude_grad: policy has no trainable magnitudes");
    const auto [first, last] = contributing_range(stack);
    Vector grads;
    grads.reserve(last - first);
    for (std::size_t i = first; i < last; ++i) {
        const FrozenEntry& e = stack.frozen[i];
        grads.push_back(frobenius_dot(upstream, matmul(e.b_hat, e.a_hat)));
    }
    return grads;
}

SiteInputs collect_site_inputs(const ToyRecModel& model, const std::vector<AdapterStack>& stacks,
                               const CodeBook& book, const std::vector<Example>& examples,
                               std::size_t cap) {
    const EffectiveWeights eff = effective_weights(model, stacks);
    SiteInputs out;
    for (const Example& ex : examples) {
        if (out.enc.size() >= cap && out.dec.size() >= cap) break;
        const ForwardTrace tr = forward(model, eff, book, ex.history, book.code_of(ex.target));
        if (out.enc.size() < cap) out.enc.push_back(tr.h);
        for (const Vector& a : tr.inputs) {
            if (out.dec.size() >= cap) break;
            out.dec.push_back(a);
        }
    }
    return out;
}

namespace {

struct GradAccum {
    bool base = false;
    Matrix d_embed, d_w_enc, d_w_dec;
    std::vector<Matrix> d_w_out;
    Matrix d_m_enc, d_m_dec;  // gradients w.r.t. the effective site matrices
};

// One example's backward sweep; contributions scaled by `weight`.
void backward_example(const ToyRecModel& model, const EffectiveWeights& eff, const CodeBook& book,
                      const Example& ex, const ForwardTrace& tr, double weight, GradAccum& acc) {
    const std::size_t L = model.code_len();
    const std::size_t d = model.hidden;
    const ItemCode& target = book.code_of(ex.target);

    std::vector<Vector> ds(L, Vector(d, 0.0));
    for (std::size_t j = 0; j < L; ++j) {
        Vector dz = softmax(tr.logits[j]);
        dz[target.tokens[j]] -= 1.0;
        for (double& v : dz) v *= weight;
        // ds[j] += w_out[j]ᵀ dz
        const Matrix& wo = model.w_out[j];
        for (std::size_t r = 0; r < wo.rows(); ++r) {
            const double g = dz[r];
            if (g == 0.0) continue;
            for (std::size_t c = 0; c < d; ++c) ds[j][c] += wo(r, c) * g;
        }
        if (acc.base) {
            Matrix& dwo = acc.d_w_out[j];
            for (std::size_t r = 0; r < wo.rows(); ++r)
                for (std::size_t c = 0; c < d; ++c) dwo(r, c) += dz[r] * tr.states[j][c];
        }
    }

    for (std::size_t j = L; j-- > 1;) {
        Vector dpre(d);
        for (std::size_t c = 0; c < d; ++c)
            dpre[c] = ds[j][c] * (1.0 - tr.states[j][c] * tr.states[j][c]);
        const Vector& a = tr.inputs[j - 1];
        for (std::size_t r = 0; r < d; ++r)
            for (std::size_t c = 0; c < d; ++c) acc.d_m_dec(r, c) += dpre[r] * a[c];
        const Vector dinput = matvec_t(eff.m_dec, dpre);
        for (std::size_t c = 0; c < d; ++c) ds[j - 1][c] += dinput[c];
        if (acc.base) {
            const std::size_t row = model.token_offsets[j - 1] + target.tokens[j - 1];
            for (std::size_t c = 0; c < d; ++c) acc.d_embed(row, c) += dinput[c];
        }
    }

    Vector dpre0(d);
    for (std::size_t c = 0; c < d; ++c)
        dpre0[c] = ds[0][c] * (1.0 - tr.states[0][c] * tr.states[0][c]);
    for (std::size_t r = 0; r < d; ++r)
        for (std::size_t c = 0; c < d; ++c) acc.d_m_enc(r, c) += dpre0[r] * tr.h[c];

    if (acc.base) {
        const Vector dh = matvec_t(eff.m_enc, dpre0);
        const std::size_t start =
            ex.history.size() > kHistoryWindow ? ex.history.size() - kHistoryWindow : 0;
        const std::size_t n_tokens = (ex.history.size() - start) * L;
        const double inv = 1.0 / static_cast<double>(n_tokens);
        for (std::size_t idx = start; idx < ex.history.size(); ++idx) {
            const ItemCode& code = book.code_of(ex.history[idx]);
            for (std::size_t j = 0; j < L; ++j) {
                const std::size_t row = model.token_offsets[j] + code.tokens[j];
                for (std::size_t c = 0; c < d; ++c) acc.d_embed(row, c) += dh[c] * inv;
            }
        }
    }
}

}  // namespace

LossGrad loss_and_grad(const ToyRecModel& model, const std::vector<AdapterStack>& stacks,
                       const CodeBook& book, const std::vector<Example>& batch,
                       const ParamVector* v_prev, const TrainConfig& config,
                       std::size_t stage_index) {
    if (batch.empty()) throw PreconditionError("loss_and_grad: empty batch");
    const EffectiveWeights eff = effective_weights(model, stacks);
    const std::vector<TrainableRef> refs = trainable_refs(model, stacks, stage_index);
    const double weight = 1.0 / static_cast<double>(batch.size());

    GradAccum acc;
    acc.base = stage_index <= 1;
    const std::size_t d = model.hidden;
    acc.d_m_enc = Matrix(d, d);
    acc.d_m_dec = Matrix(d, d);
    if (acc.base) {
        acc.d_embed = Matrix(model.embed.rows(), d);
        acc.d_w_enc = Matrix(d, d);
        acc.d_w_dec = Matrix(d, d);
        acc.d_w_out.resize(model.code_len());
        for (std::size_t j = 0; j < model.code_len(); ++j)
            acc.d_w_out[j] = Matrix(model.codebook_sizes[j], d);
    }

    double data_loss = 0.0;
    for (std::size_t e = 0; e < batch.size(); ++e) {
        const Example& ex = batch[e];
        const ForwardTrace tr = forward(model, eff, book, ex.history, book.code_of(ex.target));
        double ex_loss = 0.0;
        for (std::size_t j = 0; j < model.code_len(); ++j) {
            const Vector lsm = log_softmax(tr.logits[j]);
            ex_loss -= lsm[book.code_of(ex.target).tokens[j]];
        }
        if (!std::isfinite(ex_loss))
            throw NumericError("loss_and_grad: non-finite loss at example " + std::to_string(e));
        data_loss += weight * ex_loss;
        backward_example(model, eff, book, ex, tr, weight, acc);
    }

    // Effective-matrix gradients split into base and adapter-factor parts.
    LossGrad out;
    std::vector<ParamVector::Group> groups;
    groups.reserve(refs.size());
    using Kind = TrainableRef::Kind;
    for (const TrainableRef& r : refs) {
        switch (r.kind) {
            case Kind::Embed:
                groups.push_back({r.group_id, acc.d_embed.flat()});
                break;
            case Kind::WEnc:
                groups.push_back({r.group_id, acc.d_m_enc.flat()});
                break;
            case Kind::WDec:
                groups.push_back({r.group_id, acc.d_m_dec.flat()});
                break;
            case Kind::WOut:
                groups.push_back({r.group_id, acc.d_w_out[r.index].flat()});
                break;
            case Kind::LoraA: {
                const AdapterStack& s = stacks[r.index];
                const Matrix& dm = s.site_id == "enc" ? acc.d_m_enc : acc.d_m_dec;
                groups.push_back({r.group_id, matmul(s.live.b.transposed(), dm).flat()});
                break;
            }
            case Kind::LoraB: {
                const AdapterStack& s = stacks[r.index];
                const Matrix& dm = s.site_id == "enc" ? acc.d_m_enc : acc.d_m_dec;
                groups.push_back({r.group_id, matmul(dm, s.live.a.transposed()).flat()});
                break;
            }
            case Kind::SdAlpha: {
                const AdapterStack& s = stacks[r.index];
                const Matrix& dm = s.site_id == "enc" ? acc.d_m_enc : acc.d_m_dec;
                groups.push_back({r.group_id, sd_magnitude_grad(s, dm)});
                break;
            }
        }
    }
    out.grad = ParamVector(std::move(groups));

    out.data_loss = data_loss;
    out.reg_value = 0.0;
    if (v_prev != nullptr && config.lambda > 0.0) {
        const ParamVector v_t = pack(stacks);
        v_t.require_same_structure(*v_prev, "loss_and_grad: regularizer anchor");

        RegularizerContext context;
        const bool needs_context = config.regularizer == RegularizerKind::SoftmaxKlPerRank ||
                                   config.regularizer == RegularizerKind::LoraOutputKl ||
                                   config.regularizer == RegularizerKind::Orthogonality;
        if (needs_context) {
            // Previous-stage factors reconstructed from the anchor; output-KL
            // probes are the batch's site inputs under those factors, so the
            // penalty is a fixed-input function of the live parameters.
            std::vector<AdapterStack> prev_stacks = stacks;
            unpack(*v_prev, prev_stacks);
            for (const AdapterStack& s : prev_stacks) {
                RegularizerContext::Site site_ctx;
                site_ctx.site_id = s.site_id;
                site_ctx.a_prev = s.live.a;
                site_ctx.b_prev = s.live.b;
                context.sites.push_back(std::move(site_ctx));
            }
            if (config.regularizer == RegularizerKind::LoraOutputKl) {
                const SiteInputs probes = collect_site_inputs(model, prev_stacks, book, batch,
                                                              config.output_kl_probe_cap);
                for (RegularizerContext::Site& s : context.sites) {
                    s.probes = s.site_id == "enc" ? probes.enc : probes.dec;
                    if (s.probes.empty() && s.site_id == "dec")
                        s.probes = probes.enc;  // single-position codes have no decoder inputs
                }
            }
        }

        const RegResult reg = variant_value_grad(config.regularizer, v_t, *v_prev, config.lambda,
                                                 needs_context ? &context : nullptr);
        out.reg_value = reg.value;
        for (const ParamVector::Group& g : reg.grad.groups()) {
            bool applied = false;
            for (ParamVector::Group& tg : out.grad.groups()) {
                if (tg.id == g.id) {
                    for (std::size_t i = 0; i < g.values.size(); ++i) tg.values[i] += g.values[i];
                    applied = true;
                    break;
                }
            }
            if (!applied) {
                double mass = 0.0;
                for (double v : g.values) mass += std::abs(v);
                if (mass > 0.0)
                    throw PreconditionError(
                        "loss_and_grad: regularizer gradient targets frozen group " + g.id);
            }
        }
    }

    out.loss = out.data_loss + out.reg_value;
    return out;
}

namespace {

double batch_data_loss(const ToyRecModel& model, const std::vector<AdapterStack>& stacks,
                       const CodeBook& book, const std::vector<Example>& examples) {
    if (examples.empty()) return 0.0;
    const EffectiveWeights eff = effective_weights(model, stacks);
    double total = 0.0;
    for (const Example& ex : examples) {
        const ForwardTrace tr = forward(model, eff, book, ex.history, book.code_of(ex.target));
        for (std::size_t j = 0; j < model.code_len(); ++j)
            total -= log_softmax(tr.logits[j])[book.code_of(ex.target).tokens[j]];
    }
    return total / static_cast<double>(examples.size());
}

}  // namespace

TrainLog train_stage(ToyRecModel& model, std::vector<AdapterStack>& stacks, const CodeBook& book,
                     const StageBlock& block, const ParamVector* v_prev,
                     const TrainConfig& config, std::size_t stage_index) {
    if (stage_index < 1) throw PreconditionError("train_stage: stage index must be >= 1");

    // InfLoRA refit: A spans the top input directions of this stage's data.
    if (stage_index >= 2 && !block.pairs.empty()) {
        const bool any_inf = std::any_of(stacks.begin(), stacks.end(), [](const AdapterStack& s) {
            return policy_fixes_a(s.policy);
        });
        if (any_inf) {
            constexpr std::size_t kCovarianceSampleCap = 512;
            const SiteInputs inputs =
                collect_site_inputs(model, stacks, book, block.pairs, kCovarianceSampleCap);
            for (AdapterStack& s : stacks) {
                if (!policy_fixes_a(s.policy)) continue;
                const std::vector<Vector>& xs =
                    s.site_id == "enc" ? inputs.enc
                                       : (inputs.dec.empty() ? inputs.enc : inputs.dec);
                LoraAdapter refit = inflora_init(s.site_id, xs, s.live.rank, s.live.d_out());
                refit.b = s.live.b;  // inherit (or keep the fresh zero) B
                s.live = refit;
            }
        }
    }

    TrainLog log;
    if (config.epochs == 0 || block.pairs.empty()) return log;

    const double step = stage_index <= 1 ? config.lr : config.lr * config.lr_scale;
    std::mt19937_64 engine = make_engine(config.seed, stage_index, "train");
    std::vector<std::size_t> order(block.pairs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    const std::vector<TrainableRef> refs = trainable_refs(model, stacks, stage_index);
    ParamVector params = snapshot_params(model, stacks, refs);

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), engine);
        double loss_sum = 0.0;
        double reg_sum = 0.0;
        std::size_t n_steps = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
            const std::size_t end = std::min(begin + config.batch_size, order.size());
            std::vector<Example> batch;
            batch.reserve(end - begin);
            for (std::size_t i = begin; i < end; ++i) batch.push_back(block.pairs[order[i]]);

            const LossGrad lg =
                loss_and_grad(model, stacks, book, batch, v_prev, config, stage_index);
            if (!std::isfinite(lg.loss) || lg.loss > config.divergence_threshold)
                throw DivergenceError("train_stage: objective diverged",
                                      static_cast<long>(epoch));
            loss_sum += lg.loss;
            reg_sum += lg.reg_value;
            ++n_steps;

            params.axpy(-step, lg.grad);
            assign_params(model, stacks, refs, params);
        }

        EpochLog el;
        el.epoch = epoch;
        el.train_loss = loss_sum / static_cast<double>(n_steps);
        el.reg_value = reg_sum / static_cast<double>(n_steps);
        el.val_loss = batch_data_loss(model, stacks, book, block.val_pairs);
        log.epochs.push_back(el);
    }
    return log;
}

}  // namespace peso
