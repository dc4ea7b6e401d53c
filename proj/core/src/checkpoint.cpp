#include <cstring>
#include <fstream>

#include "peso/harness.hpp"
#include "peso/rng.hpp"

namespace peso {

namespace {

constexpr char kMagic[8] = {'P', 'E', 'S', 'O', 'C', 'K', 'P', '1'};

class ByteWriter {
public:
    void u64(std::uint64_t v) {
        char buf[8];
        std::memcpy(buf, &v, 8);
        out_.append(buf, 8);
    }
    void f64(double v) {
        char buf[8];
        std::memcpy(buf, &v, 8);
        out_.append(buf, 8);
    }
    void boolean(bool v) { out_.push_back(v ? 1 : 0); }
    void str(const std::string& s) {
        u64(s.size());
        out_.append(s);
    }
    void vec(const Vector& v) {
        u64(v.size());
        for (double x : v) f64(x);
    }
    void matrix(const Matrix& m) {
        u64(m.rows());
        u64(m.cols());
        for (double x : m.flat()) f64(x);
    }
    const std::string& buffer() const { return out_; }

private:
    std::string out_;
};

class ByteReader {
public:
    explicit ByteReader(std::string buf) : buf_(std::move(buf)) {}

    std::uint64_t u64() {
        require(8);
        std::uint64_t v;
        std::memcpy(&v, buf_.data() + pos_, 8);
        pos_ += 8;
        return v;
    }
    double f64() {
        require(8);
        double v;
        std::memcpy(&v, buf_.data() + pos_, 8);
        pos_ += 8;
        return v;
    }
    bool boolean() {
        require(1);
        return buf_[pos_++] != 0;
    }
    std::string str() {
        const std::uint64_t n = u64();
        require(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    Vector vec() {
        const std::uint64_t n = u64();
        Vector v(n);
        for (std::uint64_t i = 0; i < n; ++i) v[i] = f64();
        return v;
    }
    Matrix matrix() {
        const std::uint64_t r = u64();
        const std::uint64_t c = u64();
        require(r * c * 8);
        Matrix m(r, c);
        for (double& x : m.flat()) x = f64();
        return m;
    }
    bool done() const { return pos_ == buf_.size(); }

private:
    void require(std::uint64_t n) {
        if (pos_ + n > buf_.size()) throw CheckpointError("checkpoint truncated");
    }
    std::string buf_;
    std::size_t pos_ = 0;
};

void write_adapter(ByteWriter& w, const LoraAdapter& a) {
    w.str(a.site_id);
    w.matrix(a.a);
    w.matrix(a.b);
    w.u64(a.rank);
    w.boolean(a.a_trainable);
}

LoraAdapter read_adapter(ByteReader& r) {
    LoraAdapter a;
    a.site_id = r.str();
    a.a = r.matrix();
    a.b = r.matrix();
    a.rank = r.u64();
    a.a_trainable = r.boolean();
    return a;
}

}  // namespace

void checkpoint_save(const std::string& path, const Checkpoint& ckpt) {
    ByteWriter w;
    w.u64(ckpt.config_hash);
    w.u64(ckpt.completed_stage);
    w.str(ckpt.rng_state);

    const ToyRecModel& m = ckpt.model;
    w.u64(m.hidden);
    w.u64(m.codebook_sizes.size());
    for (std::size_t k : m.codebook_sizes) w.u64(k);
    for (std::size_t o : m.token_offsets) w.u64(o);
    w.matrix(m.embed);
    w.matrix(m.w_enc);
    w.matrix(m.w_dec);
    for (const Matrix& wo : m.w_out) w.matrix(wo);

    w.u64(ckpt.stacks.size());
    for (const AdapterStack& s : ckpt.stacks) {
        w.str(s.site_id);
        w.str(policy_name(s.policy));
        w.u64(s.frozen.size());
        for (const FrozenEntry& e : s.frozen) {
            w.matrix(e.a_hat);
            w.matrix(e.b_hat);
            w.f64(e.alpha);
        }
        write_adapter(w, s.live);
    }

    w.u64(ckpt.v_prev.group_count());
    for (const ParamVector::Group& g : ckpt.v_prev.groups()) {
        w.str(g.id);
        w.vec(g.values);
    }

    const std::string& body = w.buffer();
    const std::uint64_t checksum = fnv1a64(body);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("checkpoint_save: cannot open " + path);
    out.write(kMagic, sizeof(kMagic));
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
    out.write(reinterpret_cast<const char*>(&checksum), 8);
    if (!out) throw CheckpointError("checkpoint_save: write failed for " + path);
}

Checkpoint checkpoint_load(const std::string& path, std::uint64_t expected_config_hash) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("checkpoint_load: cannot open " + path);
    std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (all.size() < sizeof(kMagic) + 8 ||
        std::memcmp(all.data(), kMagic, sizeof(kMagic)) != 0)
        throw CheckpointError("checkpoint_load: not a checkpoint file: " + path);

    const std::string body = all.substr(sizeof(kMagic), all.size() - sizeof(kMagic) - 8);
    std::uint64_t stored_checksum;
    std::memcpy(&stored_checksum, all.data() + all.size() - 8, 8);
    if (fnv1a64(body) != stored_checksum)
        throw CheckpointError("checkpoint_load: checksum mismatch, file is corrupt: " + path);

    ByteReader r(body);
    Checkpoint ckpt;
    ckpt.config_hash = r.u64();
    ckpt.completed_stage = r.u64();
    ckpt.rng_state = r.str();

    if (ckpt.config_hash != expected_config_hash)
        throw CheckpointError("checkpoint_load: config hash mismatch (checkpoint " +
                              std::to_string(ckpt.config_hash) + ", expected " +
                              std::to_string(expected_config_hash) + ")");

    ToyRecModel& m = ckpt.model;
    m.hidden = r.u64();
    const std::uint64_t n_pos = r.u64();
    m.codebook_sizes.resize(n_pos);
    for (std::uint64_t j = 0; j < n_pos; ++j) m.codebook_sizes[j] = r.u64();
    m.token_offsets.resize(n_pos);
    for (std::uint64_t j = 0; j < n_pos; ++j) m.token_offsets[j] = r.u64();
    m.embed = r.matrix();
    m.w_enc = r.matrix();
    m.w_dec = r.matrix();
    m.w_out.resize(n_pos);
    for (std::uint64_t j = 0; j < n_pos; ++j) m.w_out[j] = r.matrix();

    const std::uint64_t n_stacks = r.u64();
    ckpt.stacks.resize(n_stacks);
    for (std::uint64_t i = 0; i < n_stacks; ++i) {
        AdapterStack& s = ckpt.stacks[i];
        s.site_id = r.str();
        s.policy = parse_policy(r.str());
        const std::uint64_t n_frozen = r.u64();
        s.frozen.resize(n_frozen);
        for (std::uint64_t f = 0; f < n_frozen; ++f) {
            s.frozen[f].a_hat = r.matrix();
            s.frozen[f].b_hat = r.matrix();
            s.frozen[f].alpha = r.f64();
        }
        s.live = read_adapter(r);
    }

    const std::uint64_t n_groups = r.u64();
    std::vector<ParamVector::Group> groups(n_groups);
    for (std::uint64_t g = 0; g < n_groups; ++g) {
        groups[g].id = r.str();
        groups[g].values = r.vec();
    }
    ckpt.v_prev = ParamVector(std::move(groups));

    if (!r.done()) throw CheckpointError("checkpoint_load: trailing bytes in " + path);
    return ckpt;
}

}  // namespace peso
