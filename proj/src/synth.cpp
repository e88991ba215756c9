#include "cpmt/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "cpmt/errors.hpp"

namespace cpmt {

namespace fs = std::filesystem;

std::string to_string(SynthTask t) {
    switch (t) {
        case SynthTask::contingency: return "contingency";
        case SynthTask::longrange: return "longrange";
        case SynthTask::verbal: return "verbal";
        case SynthTask::cue: return "cue";
    }
    return "?";
}

SynthTask parse_synth_task(const std::string& name) {
    if (name == "contingency") return SynthTask::contingency;
    if (name == "longrange") return SynthTask::longrange;
    if (name == "verbal") return SynthTask::verbal;
    if (name == "cue") return SynthTask::cue;
    throw ConfigError("unknown synthetic task '" + name + "' (expected contingency, longrange, verbal or cue)");
}

std::vector<double> parse_balance(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError("class balance entry '" + item + "' is not a number");
        }
    }
    return out;
}

std::vector<double> balance_preset(const std::string& name_or_csv) {
    if (name_or_csv == "dami-like") return {0.03, 0.27, 0.70};
    if (name_or_csv == "uniform") return {1.0 / 3, 1.0 / 3, 1.0 / 3};
    return parse_balance(name_or_csv);
}

std::vector<double> SynthSpec::balance() const {
    if (!class_balance.empty()) return class_balance;
    switch (task) {
        case SynthTask::longrange: return {0.25, 0.5, 0.25};
        case SynthTask::cue: return {0.03, 0.27, 0.70};
        default: return {1.0 / 3, 1.0 / 3, 1.0 / 3};
    }
}

void SynthSpec::validate() const {
    if (n_fragments == 0) throw DataError("n_fragments must be positive");
    if (T == 0 || d_a == 0 || d_v == 0) throw DataError("T, d_a and d_v must be positive");
    if (!(rho >= 0.0 && rho <= 1.0)) throw DataError("contingency strength rho must lie in [0, 1]");
    if (lag >= T) throw DataError("lag " + std::to_string(lag) + " must be smaller than T " + std::to_string(T));
    if (!(noise >= 0.0)) throw DataError("noise must be >= 0");
    if (longrange_horizon == 0 || longrange_horizon > T) throw DataError("longrange_horizon must lie in [1, T]");
    if (task == SynthTask::longrange && longrange_horizon < 2)
        throw DataError("the long-range task needs at least two segments");
    if (n_groups < 3) throw DataError("need at least 3 groups");
    const auto b = balance();
    if (b.size() != 3) throw DataError("class balance must have 3 entries, got " + std::to_string(b.size()));
    double s = 0.0;
    for (double v : b) {
        if (!(v >= 0.0)) throw DataError("class balance entries must be >= 0");
        s += v;
    }
    if (std::abs(s - 1.0) > 1e-6) throw DataError("class balance must sum to 1, sums to " + std::to_string(s));
}

namespace {

// Largest-remainder allocation of n labels, then a seeded shuffle.
std::vector<std::size_t> allocate_labels(const std::vector<double>& balance, std::size_t n, Rng& rng) {
    std::vector<std::size_t> counts(balance.size());
    std::vector<std::pair<double, std::size_t>> rem;
    std::size_t used = 0;
    for (std::size_t c = 0; c < balance.size(); ++c) {
        const double exact = balance[c] * static_cast<double>(n);
        counts[c] = static_cast<std::size_t>(std::floor(exact));
        used += counts[c];
        rem.emplace_back(exact - std::floor(exact), c);
    }
    std::stable_sort(rem.begin(), rem.end(), [](auto a, auto b) { return a.first > b.first; });
    for (std::size_t i = 0; used < n; ++i, ++used) ++counts[rem[i % rem.size()].second];
    std::vector<std::size_t> labels;
    for (std::size_t c = 0; c < counts.size(); ++c) labels.insert(labels.end(), counts[c], c);
    rng.shuffle(labels);
    return labels;
}

std::vector<double> gaussian(Rng& rng, std::size_t n, double sd = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal(0.0, sd);
    return v;
}

std::vector<double> unit_vector(Rng& rng, std::size_t d) {
    auto v = gaussian(rng, d);
    double s = 0.0;
    for (double x : v) s += x * x;
    s = std::sqrt(s);
    for (auto& x : v) x /= s;
    return v;
}

// [T x d] row-major buffers for one person.
struct Streams {
    std::vector<double> audio, video;
};

void add_motif(std::vector<double>& x, std::size_t d, std::size_t begin, std::size_t end, const std::vector<double>& mu,
               double amp) {
    for (std::size_t t = begin; t < end; ++t)
        for (std::size_t j = 0; j < d; ++j) x[t * d + j] += amp * mu[j];
}

const char* kEntities[] = {"parent", "child", "both"};

std::string class_text(std::size_t label, const std::string& entity, Rng& rng) {
    static const char* fillers[] = {"today", "again", "for a while", "during the story", "near the end", "at first"};
    static const char* by_class[3][3] = {
        {"the parent reads alone and gets little response", "the child looks away and seems distracted",
         "the dyad is disconnected and rarely shares focus"},
        {"the parent prompts now and then and waits", "the child glances at the book from time to time",
         "the dyad shares attention on and off"},
        {"the parent asks questions and laughs along", "the child points at the pictures and answers eagerly",
         "the dyad is deeply absorbed in the story together"}};
    std::size_t e = entity == "parent" ? 0 : entity == "child" ? 1 : 2;
    return std::string(by_class[label][e]) + " " + fillers[rng.index(6)];
}

}  // namespace

Tensor synth_coupling(std::uint64_t seed, Modality m, std::size_t d) {
    Rng rng(Rng::derive(seed, 1000 + static_cast<std::uint64_t>(m)));
    // Gram-Schmidt on a Gaussian matrix: a random orthogonal map.
    std::vector<std::vector<double>> q;
    while (q.size() < d) {
        auto v = gaussian(rng, d);
        for (const auto& u : q) {
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += v[j] * u[j];
            for (std::size_t j = 0; j < d; ++j) v[j] -= dot * u[j];
        }
        double s = 0.0;
        for (double x : v) s += x * x;
        s = std::sqrt(s);
        if (s < 1e-6) continue;
        for (auto& x : v) x /= s;
        q.push_back(std::move(v));
    }
    std::vector<double> w(d * d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) w[i * d + j] = q[i][j];
    return Tensor::from({d, d}, std::move(w));
}

SynthDataset synth_fragments(const SynthSpec& spec) {
    spec.validate();
    SynthDataset ds;
    switch (spec.task) {
        case SynthTask::contingency: ds.class_names = {"none", "a_leads", "b_leads"}; break;
        case SynthTask::longrange: ds.class_names = {"neither", "one", "both"}; break;
        default: ds.class_names = {"low", "mid", "high"}; break;
    }
    Rng label_rng(Rng::derive(spec.seed, 1));
    const auto labels = allocate_labels(spec.balance(), spec.n_fragments, label_rng);

    Rng motif_rng(Rng::derive(spec.seed, 2));
    std::vector<std::vector<double>> motif_v, motif_a;  // early, late
    for (int i = 0; i < 2; ++i) {
        motif_v.push_back(unit_vector(motif_rng, spec.d_v));
        motif_a.push_back(unit_vector(motif_rng, spec.d_a));
    }
    std::vector<std::vector<double>> cue_v, cue_a;
    for (int c = 0; c < 3; ++c) {
        cue_v.push_back(unit_vector(motif_rng, spec.d_v));
        cue_a.push_back(unit_vector(motif_rng, spec.d_a));
    }
    const Tensor w_a = synth_coupling(spec.seed, Modality::audio, spec.d_a);
    const Tensor w_v = synth_coupling(spec.seed, Modality::video, spec.d_v);
    const std::size_t T = spec.T;
    const std::size_t seg = T / spec.longrange_horizon;

    for (std::size_t i = 0; i < spec.n_fragments; ++i) {
        Rng rng(Rng::derive(spec.seed, 100 + i));
        const std::size_t label = labels[i];
        Streams a{gaussian(rng, T * spec.d_a), gaussian(rng, T * spec.d_v)};
        Streams b{gaussian(rng, T * spec.d_a), gaussian(rng, T * spec.d_v)};

        if (spec.task == SynthTask::contingency && label != 0) {
            const double keep = std::sqrt(1.0 - spec.rho * spec.rho);
            // label 1: a leads (b follows); label 2: b leads.
            Streams& leader = label == 1 ? a : b;
            Streams& follower = label == 1 ? b : a;
            auto couple = [&](const std::vector<double>& src, std::vector<double>& dst, const Tensor& w,
                              std::size_t d) {
                const auto wd = w.data();
                for (std::size_t t = spec.lag; t < T; ++t)
                    for (std::size_t k = 0; k < d; ++k) {
                        double s = 0.0;
                        for (std::size_t j = 0; j < d; ++j) s += src[(t - spec.lag) * d + j] * wd[j * d + k];
                        dst[t * d + k] = spec.rho * s + keep * dst[t * d + k];
                    }
            };
            couple(leader.audio, follower.audio, w_a, spec.d_a);
            couple(leader.video, follower.video, w_v, spec.d_v);
        }
        if (spec.task == SynthTask::longrange) {
            const bool early = label == 2 || (label == 1 && rng.bernoulli(0.5));
            const bool late = label == 2 || (label == 1 && !early);
            for (Streams* p : {&a, &b}) {
                if (early) {
                    add_motif(p->video, spec.d_v, 0, seg, motif_v[0], spec.motif_amplitude);
                    add_motif(p->audio, spec.d_a, 0, seg, motif_a[0], spec.motif_amplitude);
                }
                if (late) {
                    add_motif(p->video, spec.d_v, T - seg, T, motif_v[1], spec.motif_amplitude);
                    add_motif(p->audio, spec.d_a, T - seg, T, motif_a[1], spec.motif_amplitude);
                }
            }
        }
        if (spec.task == SynthTask::verbal || spec.task == SynthTask::cue) {
            add_motif(b.video, spec.d_v, 0, T, cue_v[label], spec.cue_strength);
            add_motif(b.audio, spec.d_a, 0, T, cue_a[label], spec.cue_strength);
        }
        if (spec.noise > 0.0)
            for (Streams* p : {&a, &b})
                for (auto* buf : {&p->audio, &p->video})
                    for (auto& x : *buf) x += rng.normal(0.0, spec.noise);

        Fragment f;
        f.id = "f" + std::to_string(100000 + i).substr(1);
        f.group_id = "g" + std::to_string(i % spec.n_groups);
        f.label = label;
        f.duration_s = 10.0;
        const double rate = static_cast<double>(T) / f.duration_s;
        auto person = [&](const char* id, Role role, Streams& s) {
            PersonStream p;
            p.person_id = id;
            p.role = role;
            p.group_id = f.group_id;
            p.streams.push_back({Modality::audio, Tensor::from({T, spec.d_a}, std::move(s.audio)), rate});
            p.streams.push_back({Modality::video, Tensor::from({T, spec.d_v}, std::move(s.video)), rate});
            return p;
        };
        f.persons.push_back(person("a", Role::other, a));
        f.persons.push_back(person("b", Role::self, b));

        if (spec.task == SynthTask::verbal) {
            PromptContext ctx;
            ctx.history = {{"parent", "let us read page " + std::to_string(1 + rng.index(40)) + " of " + f.id},
                           {"child", rng.bernoulli(0.5) ? "okay" : "what is that"}};
            for (const char* e : kEntities) {
                const std::string text = spec.informative_text ? class_text(label, e, rng)
                                                               : "the two are sitting together with a book";
                ds.fixture[prompt_hash(build_prompt(ctx, e))] = text;
            }
            f.context = std::move(ctx);
        }
        ds.fragments.push_back(std::move(f));
    }
    return ds;
}

Manifest synth_generate(const SynthSpec& spec, const std::string& dir) {
    const SynthDataset ds = synth_fragments(spec);
    std::string fixture;
    fs::create_directories(dir);
    if (!ds.fixture.empty()) {
        fixture = "llm_fixture.json";
        nlohmann::json j(ds.fixture);
        std::ofstream out(fs::path(dir) / fixture);
        if (!out) throw DataError("cannot write LLM fixture in " + dir);
        out << j.dump(1) << "\n";
    }
    return save_dataset(dir, "synthetic-" + to_string(spec.task), ds.class_names, ds.fragments, fixture);
}

}  // namespace cpmt
