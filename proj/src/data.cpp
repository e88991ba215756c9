#include "cpmt/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <set>

#include "cpmt/errors.hpp"

namespace cpmt {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "tensor I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'C', 'P', 'M', 'T'};
constexpr std::uint16_t kVersion = 1;
constexpr std::size_t kHeaderFixed = 8;

template <typename T>
void put(std::vector<unsigned char>& out, T v) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    out.insert(out.end(), b, b + sizeof(T));
}

template <typename T>
T get(const std::vector<unsigned char>& in, std::size_t offset) {
    T v;
    std::memcpy(&v, in.data() + offset, sizeof(T));
    return v;
}

std::vector<unsigned char> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Shape decode_header(const std::vector<unsigned char>& b, const std::string& origin, std::size_t& payload_offset) {
    if (b.size() < kHeaderFixed)
        throw FormatError(origin + ": truncated header at byte offset " + std::to_string(b.size()) + ", need " +
                          std::to_string(kHeaderFixed) + " bytes");
    if (std::memcmp(b.data(), kMagic, 4) != 0) throw FormatError(origin + ": bad magic at byte offset 0");
    const auto version = get<std::uint16_t>(b, 4);
    if (version != kVersion)
        throw FormatError(origin + ": unsupported version " + std::to_string(version) + " at byte offset 4");
    const auto rank = get<std::uint16_t>(b, 6);
    if (rank < 1 || rank > 3) throw FormatError(origin + ": rank " + std::to_string(rank) + " at byte offset 6");
    if (b.size() < kHeaderFixed + 8u * rank)
        throw FormatError(origin + ": truncated shape at byte offset " + std::to_string(b.size()));
    Shape shape(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        shape[i] = get<std::uint64_t>(b, kHeaderFixed + 8 * i);
        if (shape[i] == 0)
            throw FormatError(origin + ": zero dimension at byte offset " + std::to_string(kHeaderFixed + 8 * i));
    }
    payload_offset = kHeaderFixed + 8u * rank;
    return shape;
}

}  // namespace

std::vector<unsigned char> encode_tensor(const Tensor& t) {
    if (!t.defined()) throw DimensionError("cannot encode an undefined tensor");
    if (t.rank() < 1 || t.rank() > 3) throw DimensionError("tensor files hold rank 1-3, got " + shape_str(t.shape()));
    std::vector<unsigned char> out(kMagic, kMagic + 4);
    put<std::uint16_t>(out, kVersion);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint64_t>(out, d);
    out.reserve(out.size() + 4 * t.numel());
    for (double v : t.data()) put<float>(out, static_cast<float>(v));
    return out;
}

Tensor decode_tensor(const std::vector<unsigned char>& b, const std::string& origin) {
    std::size_t off = 0;
    Shape shape = decode_header(b, origin, off);
    const std::size_t n = shape_numel(shape);
    const std::size_t expected = off + 4 * n;
    if (b.size() != expected)
        throw FormatError(origin + ": payload length mismatch, expected " + std::to_string(expected) +
                          " bytes in total, got " + std::to_string(b.size()) + " (payload starts at byte offset " +
                          std::to_string(off) + ")");
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = get<float>(b, off + 4 * i);
    return Tensor::from(std::move(shape), std::move(v));
}

void write_tensor(const std::string& path, const Tensor& t) {
    const auto bytes = encode_tensor(t);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to " + path);
}

Tensor read_tensor(const std::string& path) { return decode_tensor(slurp(path), path); }

Shape read_tensor_shape(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::vector<unsigned char> head(kHeaderFixed + 24);
    in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
    head.resize(static_cast<std::size_t>(in.gcount()));
    std::size_t off = 0;
    return decode_header(head, path, off);
}

Tensor snap_to_float(const Tensor& t) {
    std::vector<double> v(t.data().begin(), t.data().end());
    for (auto& x : v) x = static_cast<float>(x);
    return Tensor::from(t.shape(), std::move(v));
}

std::string to_string(Role r) { return r == Role::self ? "self" : "other"; }

Role parse_role(const std::string& name) {
    if (name == "self") return Role::self;
    if (name == "other") return Role::other;
    throw DataError("unknown person role '" + name + "' (expected self or other)");
}

const ModalityStream* PersonStream::find(Modality m) const {
    for (const auto& s : streams)
        if (s.modality == m) return &s;
    return nullptr;
}

const PersonStream& Fragment::person(Role r) const {
    for (const auto& p : persons)
        if (p.role == r) return p;
    throw DataError("fragment " + id + " has no person with role " + to_string(r));
}

void Fragment::validate(std::size_t num_classes) const {
    if (persons.size() != 2)
        throw DataError("fragment " + id + " has " + std::to_string(persons.size()) + " persons, need 2");
    if (persons[0].role == persons[1].role) throw DataError("fragment " + id + " needs one self and one other person");
    if (label >= num_classes)
        throw DataError("fragment " + id + " label " + std::to_string(label) + " outside [0, " +
                        std::to_string(num_classes) + ")");
    if (group_id.empty()) throw DataError("fragment " + id + " has an empty group id");
    for (const auto& p : persons) {
        if (p.group_id != group_id) throw DataError("fragment " + id + ": persons disagree on group id");
        std::set<Modality> seen;
        for (const auto& s : p.streams)
            if (!seen.insert(s.modality).second)
                throw DataError("fragment " + id + ": person " + p.person_id + " repeats modality " +
                                to_string(s.modality));
    }
}

namespace {

json context_to_json(const PromptContext& c) {
    json h = json::array();
    for (const auto& u : c.history) h.push_back({{"speaker", u.speaker}, {"text", u.text}});
    return {{"relationship", c.relationship}, {"activity", c.activity}, {"history", h},
            {"window", c.window},             {"target_label", c.target_label}, {"entities", c.entities}};
}

PromptContext context_from_json(const json& j) {
    PromptContext c;
    c.relationship = j.at("relationship").get<std::string>();
    c.activity = j.at("activity").get<std::string>();
    for (const auto& u : j.at("history")) c.history.push_back({u.at("speaker"), u.at("text")});
    c.window = j.at("window").get<std::size_t>();
    c.target_label = j.at("target_label").get<std::string>();
    c.entities = j.at("entities").get<std::vector<std::string>>();
    c.validate();
    return c;
}

}  // namespace

std::vector<std::string> Manifest::groups() const {
    std::set<std::string> g;
    for (const auto& f : fragments) g.insert(f.group_id);
    return {g.begin(), g.end()};
}

std::string Manifest::resolve(const std::string& relative) const {
    return root.empty() ? relative : (fs::path(root) / relative).string();
}

void Manifest::validate(bool check_files) const {
    if (class_names.size() < 2) throw DataError("manifest needs at least two classes");
    std::set<std::string> ids;
    for (const auto& f : fragments) {
        if (!ids.insert(f.id).second) throw DataError("duplicate fragment id " + f.id);
        if (f.label >= num_classes()) throw DataError("fragment " + f.id + " label out of range");
        if (f.group_id.empty()) throw DataError("fragment " + f.id + " has an empty group id");
        if (f.persons.size() != 2) throw DataError("fragment " + f.id + " must list two persons");
        for (const auto& p : f.persons)
            for (const auto& s : p.streams) {
                auto dim = modality_dims.find(s.modality);
                if (dim == modality_dims.end())
                    throw DataError("fragment " + f.id + " uses undeclared modality " + to_string(s.modality));
                if (!check_files) continue;
                const std::string path = resolve(s.path);
                if (!fs::exists(path)) throw DataError("missing tensor file " + path);
                const Shape shape = read_tensor_shape(path);
                if (shape.size() != 2 || shape[1] != dim->second)
                    throw DataError(path + " has shape " + shape_str(shape) + ", manifest declares width " +
                                    std::to_string(dim->second));
            }
    }
    if (!llm_fixture.empty() && check_files && !fs::exists(resolve(llm_fixture)))
        throw DataError("missing LLM fixture " + resolve(llm_fixture));
}

Manifest Manifest::load(const std::string& path) {
    fs::path p(path);
    if (fs::is_directory(p)) p /= "manifest.json";
    std::ifstream in(p);
    if (!in) throw DataError("cannot open manifest " + p.string());
    Manifest m;
    try {
        json j;
        in >> j;
        m.dataset_name = j.at("dataset_name").get<std::string>();
        m.class_names = j.at("class_names").get<std::vector<std::string>>();
        for (auto it = j.at("modality_dims").begin(); it != j.at("modality_dims").end(); ++it)
            m.modality_dims[parse_modality(it.key())] = it.value().get<std::size_t>();
        m.llm_fixture = j.value("llm_fixture", "");
        for (const auto& jf : j.at("fragments")) {
            FragmentRecord f;
            f.id = jf.at("id").get<std::string>();
            f.group_id = jf.at("group_id").get<std::string>();
            f.label = jf.at("label").get<std::size_t>();
            f.duration_s = jf.value("duration_s", 10.0);
            for (const auto& jp : jf.at("persons")) {
                PersonRef pr;
                pr.person_id = jp.at("person_id").get<std::string>();
                pr.role = parse_role(jp.at("role").get<std::string>());
                for (const auto& js : jp.at("streams"))
                    pr.streams.push_back({parse_modality(js.at("modality").get<std::string>()),
                                          js.at("path").get<std::string>(), js.value("frame_rate", 1.0)});
                f.persons.push_back(std::move(pr));
            }
            if (jf.contains("context")) f.context = context_from_json(jf.at("context"));
            m.fragments.push_back(std::move(f));
        }
    } catch (const json::exception& e) {
        throw FormatError("manifest " + p.string() + ": " + e.what());
    } catch (const ConfigError& e) {
        throw FormatError("manifest " + p.string() + ": " + e.what());
    }
    m.root = p.parent_path().string();
    return m;
}

void Manifest::save(const std::string& path) const {
    json j;
    j["dataset_name"] = dataset_name;
    j["class_names"] = class_names;
    j["num_classes"] = num_classes();
    json dims = json::object();
    for (const auto& [mod, d] : modality_dims) dims[to_string(mod)] = d;
    j["modality_dims"] = dims;
    if (!llm_fixture.empty()) j["llm_fixture"] = llm_fixture;
    json frs = json::array();
    for (const auto& f : fragments) {
        json jf = {{"id", f.id}, {"group_id", f.group_id}, {"label", f.label}, {"duration_s", f.duration_s}};
        json ps = json::array();
        for (const auto& p : f.persons) {
            json ss = json::array();
            for (const auto& s : p.streams)
                ss.push_back({{"modality", to_string(s.modality)}, {"path", s.path}, {"frame_rate", s.frame_rate}});
            ps.push_back({{"person_id", p.person_id}, {"role", to_string(p.role)}, {"streams", ss}});
        }
        jf["persons"] = ps;
        if (f.context) jf["context"] = context_to_json(*f.context);
        frs.push_back(std::move(jf));
    }
    j["fragments"] = frs;
    std::ofstream out(path);
    if (!out) throw DataError("cannot write manifest " + path);
    out << j.dump(1) << "\n";
}

Fragment load_fragment(const Manifest& m, std::size_t index) {
    if (index >= m.fragments.size()) throw DataError("fragment index " + std::to_string(index) + " out of range");
    const auto& r = m.fragments[index];
    Fragment f;
    f.id = r.id;
    f.group_id = r.group_id;
    f.label = r.label;
    f.duration_s = r.duration_s;
    f.context = r.context;
    for (const auto& pr : r.persons) {
        PersonStream p;
        p.person_id = pr.person_id;
        p.role = pr.role;
        p.group_id = r.group_id;
        for (const auto& s : pr.streams) {
            Tensor t = read_tensor(m.resolve(s.path));
            if (t.rank() != 2 || t.cols() != m.modality_dims.at(s.modality))
                throw DataError(s.path + " has shape " + shape_str(t.shape()) + ", manifest declares width " +
                                std::to_string(m.modality_dims.at(s.modality)));
            p.streams.push_back({s.modality, std::move(t), s.frame_rate});
        }
        f.persons.push_back(std::move(p));
    }
    f.validate(m.num_classes());
    return f;
}

std::vector<Fragment> load_fragments(const Manifest& m, const std::vector<std::size_t>& indices) {
    std::vector<Fragment> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(load_fragment(m, i));
    return out;
}

std::vector<Fragment> load_all(const Manifest& m) {
    std::vector<std::size_t> idx(m.fragments.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return load_fragments(m, idx);
}

Manifest save_dataset(const std::string& dir, const std::string& name, const std::vector<std::string>& class_names,
                      const std::vector<Fragment>& fragments, const std::string& llm_fixture) {
    Manifest m;
    m.dataset_name = name;
    m.class_names = class_names;
    m.llm_fixture = llm_fixture;
    m.root = dir;
    fs::create_directories(dir);
    for (const auto& f : fragments) {
        f.validate(class_names.size());
        FragmentRecord r{f.id, f.group_id, f.label, f.duration_s, {}, f.context};
        fs::create_directories(fs::path(dir) / f.id);
        for (const auto& p : f.persons) {
            PersonRef pr{p.person_id, p.role, {}};
            for (const auto& s : p.streams) {
                const std::string rel = f.id + "/" + p.person_id + "_" + to_string(s.modality) + ".cpmt";
                auto [it, inserted] = m.modality_dims.emplace(s.modality, s.features.cols());
                if (it->second != s.features.cols())
                    throw DataError("fragment " + f.id + ": inconsistent width for " + to_string(s.modality));
                write_tensor((fs::path(dir) / rel).string(), s.features);
                pr.streams.push_back({s.modality, rel, s.frame_rate});
            }
            r.persons.push_back(std::move(pr));
        }
        m.fragments.push_back(std::move(r));
    }
    m.save((fs::path(dir) / "manifest.json").string());
    return m;
}

std::string to_string(BossLabel l) {
    switch (l) {
        case BossLabel::NoCommunication: return "NoCommunication";
        case BossLabel::AttentionFollowing: return "AttentionFollowing";
        case BossLabel::JointAttention: return "JointAttention";
    }
    return "?";
}

BossLabel boss_labels(long long matched_count) {
    if (matched_count < 0) throw DataError("matched object count must be >= 0, got " + std::to_string(matched_count));
    if (matched_count > 30) return BossLabel::JointAttention;
    if (matched_count > 0) return BossLabel::AttentionFollowing;
    return BossLabel::NoCommunication;
}

std::size_t split_count(double frac, std::size_t n) {
    const auto c = static_cast<std::size_t>(std::floor(frac * static_cast<double>(n) + 0.5));
    return std::max<std::size_t>(1, c);
}

namespace {

std::vector<std::string> seeded_order(const std::vector<std::string>& groups, std::uint64_t seed) {
    std::set<std::string> unique(groups.begin(), groups.end());
    if (unique.size() < 3) throw DataError("group split needs at least 3 groups, got " + std::to_string(unique.size()));
    std::vector<std::string> order(unique.begin(), unique.end());
    Rng rng(seed);
    rng.shuffle(order);
    return order;
}

}  // namespace

Split group_split(const std::vector<std::string>& groups, double test_frac, double valid_frac, std::uint64_t seed) {
    return group_fold(groups, 0, test_frac, valid_frac, seed);
}

std::size_t fold_count(std::size_t n_groups, double test_frac) {
    const std::size_t c = split_count(test_frac, n_groups);
    return (n_groups + c - 1) / c;
}

Split group_fold(const std::vector<std::string>& groups, std::size_t fold, double test_frac, double valid_frac,
                 std::uint64_t seed) {
    if (!(test_frac > 0.0 && test_frac < 1.0) || !(valid_frac > 0.0 && valid_frac < 1.0))
        throw ConfigError("split fractions must lie in (0, 1)");
    const auto order = seeded_order(groups, seed);
    const std::size_t n = order.size();
    const std::size_t c = split_count(test_frac, n);
    const std::size_t folds = (n + c - 1) / c;
    if (fold >= folds)
        throw ConfigError("fold " + std::to_string(fold) + " out of range, have " + std::to_string(folds));
    const std::size_t begin = fold * c, end = std::min(n, begin + c);
    Split s;
    std::vector<std::string> rest;
    for (std::size_t i = 0; i < n; ++i) {
        if (i >= begin && i < end)
            s.test_groups.push_back(order[i]);
        else
            rest.push_back(order[i]);
    }
    // Remaining groups in order starting right after the test chunk.
    std::rotate(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(std::min(begin, rest.size())), rest.end());
    const std::size_t n_valid = split_count(valid_frac, rest.size());
    if (n_valid >= rest.size()) throw DataError("too few groups to keep a nonempty training split");
    s.valid_groups.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_valid));
    s.train_groups.assign(rest.begin() + static_cast<std::ptrdiff_t>(n_valid), rest.end());
    return s;
}

namespace {

template <typename GroupOf>
SplitIndices assign(std::size_t n, GroupOf group_of, const Split& s) {
    std::map<std::string, int> where;
    for (const auto& g : s.train_groups) where[g] = 0;
    for (const auto& g : s.valid_groups) where[g] = 1;
    for (const auto& g : s.test_groups) where[g] = 2;
    SplitIndices out;
    for (std::size_t i = 0; i < n; ++i) {
        auto it = where.find(group_of(i));
        if (it == where.end()) throw DataError("group " + group_of(i) + " is not assigned to any split");
        (it->second == 0 ? out.train : it->second == 1 ? out.valid : out.test).push_back(i);
    }
    return out;
}

}  // namespace

SplitIndices split_indices(const Manifest& m, const Split& s) {
    return assign(m.fragments.size(), [&](std::size_t i) { return m.fragments[i].group_id; }, s);
}

SplitIndices split_indices(const std::vector<Fragment>& fragments, const Split& s) {
    return assign(fragments.size(), [&](std::size_t i) { return fragments[i].group_id; }, s);
}

}  // namespace cpmt
