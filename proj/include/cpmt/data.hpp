#pragma once

// Feature-stream persistence, dataset manifests, BOSS-style labels and
// group-wise splitting.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cpmt/crossmodal.hpp"
#include "cpmt/verbal.hpp"

namespace cpmt {

// Layout: "CPMT" | u16 version = 1 | u16 rank | u64 dims[rank] | f32 payload,
// all little-endian, payload row-major.
void write_tensor(const std::string& path, const Tensor& t);
Tensor read_tensor(const std::string& path);
std::vector<unsigned char> encode_tensor(const Tensor& t);
Tensor decode_tensor(const std::vector<unsigned char>& bytes, const std::string& origin = "buffer");
// Shape from the header only.
Shape read_tensor_shape(const std::string& path);

// Rounds every value through single precision, the on-disk representation.
Tensor snap_to_float(const Tensor& t);

enum class Role { self, other };
std::string to_string(Role r);
Role parse_role(const std::string& name);

struct PersonStream {
    std::string person_id;
    Role role = Role::self;
    std::vector<ModalityStream> streams;
    std::string group_id;

    const ModalityStream* find(Modality m) const;
};

struct Fragment {
    std::string id;
    std::string group_id;
    std::size_t label = 0;
    double duration_s = 10.0;
    std::vector<PersonStream> persons;  // exactly two
    std::optional<PromptContext> context;

    const PersonStream& person(Role r) const;
    void validate(std::size_t num_classes) const;
};

struct StreamRef {
    Modality modality = Modality::video;
    std::string path;  // relative to the manifest directory
    double frame_rate = 1.0;
};

struct PersonRef {
    std::string person_id;
    Role role = Role::self;
    std::vector<StreamRef> streams;
};

struct FragmentRecord {
    std::string id;
    std::string group_id;
    std::size_t label = 0;
    double duration_s = 10.0;
    std::vector<PersonRef> persons;
    std::optional<PromptContext> context;
};

struct Manifest {
    std::string dataset_name;
    std::vector<std::string> class_names;
    std::map<Modality, std::size_t> modality_dims;
    std::string llm_fixture;  // relative path, empty when the dataset has no verbal context
    std::vector<FragmentRecord> fragments;
    std::string root;  // directory holding manifest.json; not serialized

    std::size_t num_classes() const { return class_names.size(); }
    std::vector<std::string> groups() const;  // sorted, unique
    std::string resolve(const std::string& relative) const;

    // Structural checks; with check_files also opens every tensor header.
    void validate(bool check_files = true) const;
    static Manifest load(const std::string& path);  // path to manifest.json or its directory
    void save(const std::string& path) const;
};

Fragment load_fragment(const Manifest& m, std::size_t index);
std::vector<Fragment> load_fragments(const Manifest& m, const std::vector<std::size_t>& indices);
std::vector<Fragment> load_all(const Manifest& m);

// Writes a whole in-memory dataset: tensor files plus manifest.json under dir.
Manifest save_dataset(const std::string& dir, const std::string& name, const std::vector<std::string>& class_names,
                      const std::vector<Fragment>& fragments, const std::string& llm_fixture = "");

enum class BossLabel { NoCommunication = 0, AttentionFollowing = 1, JointAttention = 2 };
std::string to_string(BossLabel l);
BossLabel boss_labels(long long matched_count);

struct Split {
    std::vector<std::string> train_groups;
    std::vector<std::string> valid_groups;
    std::vector<std::string> test_groups;
};

// Half-up rounding with a floor of one.
std::size_t split_count(double frac, std::size_t n);

// Groups shuffled by seed; the first round(test_frac n) go to test, then
// round(valid_frac (n - n_test)) of the rest to valid.
Split group_split(const std::vector<std::string>& groups, double test_frac = 0.1, double valid_frac = 0.2,
                  std::uint64_t seed = 0);

// Fold f of the cross-validation iteration: test groups are the f-th chunk of
// the seeded order, valid groups are taken from the remaining ones.
std::size_t fold_count(std::size_t n_groups, double test_frac = 0.1);
Split group_fold(const std::vector<std::string>& groups, std::size_t fold, double test_frac = 0.1,
                 double valid_frac = 0.2, std::uint64_t seed = 0);

struct SplitIndices {
    std::vector<std::size_t> train, valid, test;
};
SplitIndices split_indices(const Manifest& m, const Split& s);
SplitIndices split_indices(const std::vector<Fragment>& fragments, const Split& s);

}  // namespace cpmt
