#include "cpmt/model.hpp"

#include <cstring>
#include <fstream>

#include "cpmt/errors.hpp"
#include "cpmt/ops.hpp"

namespace cpmt {

using nlohmann::json;

Tensor pool(const std::vector<Tensor>& segment_outputs, const MemoryState& mem_final, PoolMode mode) {
    if (segment_outputs.empty()) throw DataError("pool needs at least one segment output");
    const Tensor tokens = mode == PoolMode::last_segment ? segment_outputs.back() : concat_rows(segment_outputs);
    if (tokens.cols() != mem_final.d())
        throw DimensionError("pool: token width " + std::to_string(tokens.cols()) + " vs slot width " +
                             std::to_string(mem_final.d()));
    return concat_cols({mean_rows(tokens), mean_rows(mem_final.slots)});
}

std::vector<std::size_t> segment_boundaries(std::size_t T, std::size_t K) {
    if (K == 0) throw ConfigError("K_segments must be positive");
    if (T < K)
        throw DataError("sequence of " + std::to_string(T) + " steps cannot be split into " + std::to_string(K) +
                        " nonempty segments; use a smaller K_segments");
    std::vector<std::size_t> b(K);
    for (std::size_t j = 0; j < K; ++j) b[j] = j * T / K;
    return b;
}

CPMTModel CPMTModel::init(const CPMTConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    CPMTModel m;
    m.cfg = cfg;
    const std::size_t d = cfg.d_model, w = 2 * d;
    m.fusion = CrossModalEncoder::init(cfg.modalities, cfg.input_dims, d, cfg.num_heads, cfg.crossmodal_layers,
                                       cfg.ffn_mult * d, rng);
    ConcatPolicy policy{cfg.concat_policy};
    m.cross_person = CrossPersonEncoder::init(policy, w, cfg.num_heads, cfg.cpa_layers, cfg.ffn_mult * w, rng);
    const std::size_t concat_width = cfg.ablations.no_individuals ? w : m.cross_person.n_streams() * w;
    if (cfg.ablations.no_individuals) m.cross_person.cross.layers.clear();
    m.projection = Linear::init(concat_width, d, rng);
    m.memory = MemoryEncoder::init(cfg.mem_layers, d, cfg.num_heads, cfg.ffn_mult * d, rng);
    {
        std::vector<double> v(cfg.k_slots * d);
        for (auto& x : v) x = rng.normal(0.0, 0.1 / std::sqrt(static_cast<double>(d)));
        m.v_bias = Tensor::from({cfg.k_slots, d}, std::move(v), true);
    }
    if (!cfg.ablations.no_llm)
        m.verbal = VerbalEncoder::init(cfg.embedding_buckets, d, cfg.num_heads, cfg.ffn_mult * d, cfg.verbal_layers, rng);
    m.head_hidden = Linear::init(2 * d, cfg.behavior_dim, rng);
    m.head_out = Linear::init(cfg.behavior_dim, cfg.num_classes, rng);
    snap_parameters(m);
    return m;
}

ParamList CPMTModel::parameters() const {
    ParamList p;
    fusion.collect("fusion", p);
    cross_person.collect("cross_person", p);
    projection.collect("projection", p);
    memory.collect("memory", p);
    p.emplace_back("memory.v_bias", v_bias);
    if (!cfg.ablations.no_llm) verbal.collect("verbal", p);
    head_hidden.collect("head.hidden", p);
    head_out.collect("head.out", p);
    return p;
}

std::size_t CPMTModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : parameters()) n += t.numel();
    return n;
}

std::size_t CPMTModel::sequence_length(const std::vector<PersonStream>& persons) const {
    if (cfg.seq_len > 0) return cfg.seq_len;
    std::size_t T = 0;
    for (const auto& p : persons)
        for (const auto& s : p.streams) {
            bool used = false;
            for (auto m : cfg.modalities) used = used || m == s.modality;
            if (used) T = T == 0 ? s.features.rows() : std::min(T, s.features.rows());
        }
    if (T == 0) throw DataError("no stream of a configured modality found");
    return T;
}

namespace {

std::vector<ModalityStream> merge_persons(const PersonStream& a, const PersonStream& b,
                                          const std::vector<Modality>& modalities) {
    std::vector<ModalityStream> out;
    for (auto m : modalities) {
        const ModalityStream* sa = a.find(m);
        const ModalityStream* sb = b.find(m);
        if (!sa || !sb) throw DataError("merged stream needs modality " + to_string(m) + " for both persons");
        if (sa->features.shape() != sb->features.shape())
            throw DataError("merged " + to_string(m) + " streams differ in shape: " +
                            shape_str(sa->features.shape()) + " vs " + shape_str(sb->features.shape()));
        out.push_back({m, add(sa->features, sb->features), sa->frame_rate});
    }
    return out;
}

}  // namespace

Tensor CPMTModel::forward(const std::vector<PersonStream>& persons, const Tensor* verbal_mem,
                          const ForwardContext& ctx, ForwardTrace* trace) const {
    if (persons.size() != 2)
        throw DataError("forward needs exactly two persons, got " + std::to_string(persons.size()));
    const PersonStream* self = nullptr;
    const PersonStream* other = nullptr;
    for (const auto& p : persons) (p.role == Role::self ? self : other) = &p;
    if (!self || !other) throw DataError("forward needs one self and one other person");

    const std::size_t T = sequence_length(persons);
    const auto boundaries = segment_boundaries(T, cfg.K_segments);
    std::optional<AttentionMask> mask;
    if (cfg.segment_local_attention) mask = AttentionMask::block_diagonal(T, boundaries);
    const AttentionMask* mp = mask ? &*mask : nullptr;
    if (trace) trace->boundaries = boundaries;

    Tensor concat;
    if (cfg.ablations.no_individuals) {
        FusionTrace* ft = trace ? &trace->fusion["merged"] : nullptr;
        auto z = fuse_person(merge_persons(*self, *other, cfg.modalities), "merged", fusion, T, mp, ctx, ft);
        std::vector<std::vector<double>>* w = nullptr;
        if (trace) {
            trace->cross_person.directions = {Direction::self};
            trace->cross_person.weights.assign(1, {});
            w = &trace->cross_person.weights[0];
        }
        concat = self_stream(z.z, cross_person.own, mp, ctx, w);
    } else {
        auto zs = fuse_person(self->streams, self->person_id, fusion, T, mp, ctx,
                              trace ? &trace->fusion[self->person_id] : nullptr);
        auto zo = fuse_person(other->streams, other->person_id, fusion, T, mp, ctx,
                              trace ? &trace->fusion[other->person_id] : nullptr);
        concat = cross_person.encode_pair(zs, zo, mp, ctx, trace ? &trace->cross_person : nullptr);
    }
    const Tensor x = projection.forward(concat);

    std::vector<Tensor> segments;
    for (std::size_t j = 0; j < boundaries.size(); ++j) {
        const std::size_t end = j + 1 < boundaries.size() ? boundaries[j + 1] : T;
        segments.push_back(slice_rows(x, boundaries[j], end - boundaries[j]));
    }
    const MemoryState mem0 =
        verbal_mem ? memory_from_slots(*verbal_mem, v_bias, cfg.tau) : initial_memory(v_bias, cfg.tau);
    SegmentOptions opts;
    opts.read = opts.write = !cfg.ablations.no_memory;
    auto run = run_segments(segments, mem0, memory, ctx, opts, trace ? &trace->memory : nullptr);
    const Tensor pooled = pool(run.outputs, run.final_state, cfg.pool);
    return head_out.forward(maybe_dropout(gelu(head_hidden.forward(pooled)), ctx));
}

Tensor CPMTModel::forward(const std::vector<PersonStream>& persons, const std::vector<std::size_t>& verbal_tokens,
                          const ForwardContext& ctx, ForwardTrace* trace) const {
    if (cfg.ablations.no_llm || verbal_tokens.empty()) return forward(persons, nullptr, ctx, trace);
    const auto vm = encode_verbal_memory(verbal_tokens, verbal, v_bias, cfg.tau, ctx);
    return forward(persons, &vm.mem, ctx, trace);
}

std::vector<std::size_t> CPMTModel::verbal_tokens(const ReasoningSet& s) const {
    if (cfg.ablations.no_llm) return {};
    return verbal.embedding.buckets_of(tokenize(s.joined()));
}

const Tensor& Checkpoint::at(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return t;
    throw LookupError("checkpoint has no tensor named " + name);
}

namespace {

constexpr char kCkptMagic[8] = {'C', 'P', 'M', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCkptVersion = 1;

template <typename T>
void put(std::string& out, T v) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    out.append(b, sizeof(T));
}

class Cursor {
public:
    Cursor(const std::vector<unsigned char>& b, std::string origin) : b_(b), origin_(std::move(origin)) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, b_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::vector<unsigned char> bytes(std::size_t n) {
        need(n);
        std::vector<unsigned char> out(b_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                       b_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return out;
    }

    std::size_t pos() const { return pos_; }
    bool done() const { return pos_ == b_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > b_.size())
            throw FormatError(origin_ + ": truncated at byte offset " + std::to_string(pos_) + ", need " +
                              std::to_string(n) + " more bytes");
    }
    const std::vector<unsigned char>& b_;
    std::string origin_;
    std::size_t pos_ = 0;
};

}  // namespace

void write_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::string out(kCkptMagic, 8);
    put<std::uint32_t>(out, kCkptVersion);
    const std::string meta = ck.meta.dump();
    put<std::uint64_t>(out, meta.size());
    out += meta;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ck.tensors.size()));
    for (const auto& [name, t] : ck.tensors) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        const auto blob = encode_tensor(t);
        put<std::uint64_t>(out, blob.size());
        out.append(reinterpret_cast<const char*>(blob.data()), blob.size());
    }
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw DataError("cannot write checkpoint " + tmp);
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw DataError("short write to " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw DataError("cannot move checkpoint into place at " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open checkpoint " + path);
    const std::vector<unsigned char> b{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
    Cursor c(b, path);
    const auto magic = c.bytes(8);
    if (std::memcmp(magic.data(), kCkptMagic, 8) != 0) throw FormatError(path + ": bad checkpoint magic at byte offset 0");
    const auto version = c.get<std::uint32_t>();
    if (version != kCkptVersion)
        throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version) + " at byte offset 8");
    Checkpoint ck;
    const auto meta_len = c.get<std::uint64_t>();
    const auto meta = c.bytes(meta_len);
    ck.meta = json::parse(meta.begin(), meta.end(), nullptr, false);
    if (ck.meta.is_discarded()) throw FormatError(path + ": checkpoint metadata is not valid JSON");
    const auto count = c.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = c.get<std::uint32_t>();
        const auto name = c.bytes(name_len);
        const auto blob_len = c.get<std::uint64_t>();
        const std::size_t at = c.pos();
        const std::string n(name.begin(), name.end());
        ck.tensors.emplace_back(n, decode_tensor(c.bytes(blob_len), path + " tensor " + n + " at byte offset " +
                                                                     std::to_string(at)));
    }
    if (!c.done()) throw FormatError(path + ": trailing bytes at offset " + std::to_string(c.pos()));
    return ck;
}

void save_model(const std::string& path, const CPMTModel& model, json extra) {
    Checkpoint ck;
    ck.meta = {{"config", to_json(model.cfg)}, {"extra", std::move(extra)}};
    for (const auto& [name, t] : model.parameters()) ck.tensors.emplace_back(name, t.detach());
    write_checkpoint(path, ck);
}

void load_parameters(const CPMTModel& model, const Checkpoint& ck) {
    for (auto& [name, t] : model.parameters()) {
        const Tensor& src = ck.at(name);
        if (src.shape() != t.shape())
            throw FormatError("checkpoint tensor " + name + " has shape " + shape_str(src.shape()) + ", model expects " +
                              shape_str(t.shape()));
        Tensor dst = t;
        std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
    }
}

CPMTModel load_model(const std::string& path, json* extra) {
    const Checkpoint ck = read_checkpoint(path);
    if (!ck.meta.contains("config")) throw FormatError(path + ": checkpoint has no model config");
    CPMTModel model = CPMTModel::init(model_config_from_json(ck.meta.at("config")));
    load_parameters(model, ck);
    if (extra) *extra = ck.meta.value("extra", json::object());
    return model;
}

void snap_parameters(const CPMTModel& model) {
    for (auto& [name, t] : model.parameters()) {
        Tensor p = t;
        for (auto& v : p.mutable_data()) v = static_cast<float>(v);
    }
}

}  // namespace cpmt
