#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hlm/errors.hpp"
#include "hlm/model.hpp"
#include "hlm/optimizer.hpp"

namespace hlm {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written as raw little-endian words");

enum class Stage { PretrainedVanilla, PretrainedHeadless, HeadRecovered };

inline std::string stage_to_string(Stage s) {
    switch (s) {
        case Stage::PretrainedVanilla: return "pretrained_vanilla";
        case Stage::PretrainedHeadless: return "pretrained_headless";
        case Stage::HeadRecovered: return "head_recovered";
    }
    throw ContractError("unreachable stage value");
}

inline Stage stage_from_string(const std::string& s) {
    if (s == "pretrained_vanilla") return Stage::PretrainedVanilla;
    if (s == "pretrained_headless") return Stage::PretrainedHeadless;
    if (s == "head_recovered") return Stage::HeadRecovered;
    throw DataError("unknown checkpoint stage '" + s + "'");
}

// A trained model plus enough bookkeeping to resume: the RNG needs only
// (seed, step) because every stochastic draw is a pure function of those.
template <class T>
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    Stage stage = Stage::PretrainedVanilla;
    long long step = 0;
    std::uint64_t seed = 0;
    std::uint64_t config_digest = 0;
    Parameters<T> params;
    std::optional<OptimizerState<T>> opt;

    void validate() const {
        if (step < 0) throw ContractError("checkpoint step must be non-negative");
        const bool want_head = stage == Stage::HeadRecovered;
        if (params.has_untied_head() != want_head)
            throw ContractError("untied head must be present exactly for stage head_recovered");
        if (opt && opt->m.size() != params.all().size())
            throw ContractError("optimizer state does not match parameter list");
    }
};

// 64-bit FNV-1a over the resolved config text, stored so eval reports can
// name the training provenance.
inline std::uint64_t digest_bytes(const std::string& text) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

namespace ckpt_detail {

template <class T>
constexpr const char* dtype_code() {
    if constexpr (std::is_same_v<T, float>) return "f32";
    else return "f64";
}

inline void put_u32(std::string& out, std::uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    out.append(b, 4);
}

inline void put_u64(std::string& out, std::uint64_t v) {
    char b[8];
    std::memcpy(b, &v, 8);
    out.append(b, 8);
}

struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset = 0;  // bytes from payload start
};

}  // namespace ckpt_detail

// File layout: magic "HLM1", u32 version, u64 manifest byte length, UTF-8
// manifest (one record per line), then the tensor payloads as raw
// little-endian IEEE-754 words at the offsets named in the manifest.
template <class T>
std::string serialize_checkpoint(const Checkpoint<T>& ckpt) {
    ckpt.validate();
    using ckpt_detail::Entry;

    std::vector<Entry> entries;
    std::vector<const T*> payloads;
    std::uint64_t offset = 0;
    auto add_payload = [&](const std::string& name, const Shape& shape, const T* data) {
        entries.push_back({name, shape, offset});
        payloads.push_back(data);
        offset += shape_numel(shape) * sizeof(T);
    };
    ckpt.params.for_each([&](const std::string& name, const Tensor<T>& t) {
        add_payload(name, t->shape(), t->data());
    });
    if (ckpt.opt) {
        std::size_t pi = 0;
        ckpt.params.for_each([&](const std::string& name, const Tensor<T>& t) {
            add_payload("opt.m." + name, {t->numel()}, ckpt.opt->m[pi].data());
            add_payload("opt.v." + name, {t->numel()}, ckpt.opt->v[pi].data());
            ++pi;
        });
    }

    const auto& cfg = ckpt.params.cfg;
    std::ostringstream man;
    man << std::setprecision(17);  // lossless double round trip
    man << "stage " << stage_to_string(ckpt.stage) << "\n";
    man << "step " << ckpt.step << "\n";
    man << "seed " << ckpt.seed << "\n";
    man << "config_digest " << ckpt.config_digest << "\n";
    man << "model " << cfg.vocab_size << " " << cfg.hidden << " " << cfg.max_seq_len << " "
        << cfg.n_layers << " " << cfg.n_heads << " " << cfg.d_ff << " " << (cfg.causal ? 1 : 0)
        << " " << (cfg.final_ln ? 1 : 0) << "\n";
    man << "model_real " << cfg.init_std << " " << cfg.ln_eps << "\n";
    man << "opt_step " << (ckpt.opt ? ckpt.opt->step : -1) << "\n";
    man << "tensors " << entries.size() << "\n";
    for (const auto& e : entries) {
        man << "tensor " << e.name << " " << ckpt_detail::dtype_code<T>() << " "
            << e.shape.size();
        for (std::size_t d : e.shape) man << " " << d;
        man << " " << e.offset << "\n";
    }
    const std::string manifest = man.str();

    std::string out;
    out.reserve(16 + manifest.size() + offset);
    out.append("HLM1", 4);
    ckpt_detail::put_u32(out, Checkpoint<T>::kVersion);
    ckpt_detail::put_u64(out, manifest.size());
    out += manifest;
    for (std::size_t i = 0; i < entries.size(); ++i)
        out.append(reinterpret_cast<const char*>(payloads[i]),
                   shape_numel(entries[i].shape) * sizeof(T));
    return out;
}

template <class T>
Checkpoint<T> deserialize_checkpoint(const std::string& bytes) {
    if (bytes.size() < 16 || bytes.compare(0, 4, "HLM1") != 0)
        throw DataError("not a checkpoint file (bad magic)");
    std::uint32_t version = 0;
    std::uint64_t man_len = 0;
    std::memcpy(&version, bytes.data() + 4, 4);
    std::memcpy(&man_len, bytes.data() + 8, 8);
    if (version != Checkpoint<T>::kVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(version));
    if (16 + man_len > bytes.size()) throw DataError("truncated checkpoint manifest");

    const std::string manifest = bytes.substr(16, man_len);
    const std::size_t payload_start = 16 + static_cast<std::size_t>(man_len);

    Checkpoint<T> ckpt;
    ModelConfig cfg;
    long long opt_step = -1;
    std::size_t n_tensors = 0;
    struct Rec {
        Shape shape;
        std::uint64_t offset;
    };
    std::map<std::string, Rec> recs;

    std::istringstream in(manifest);
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "stage") {
            std::string s;
            ls >> s;
            ckpt.stage = stage_from_string(s);
        } else if (key == "step") {
            ls >> ckpt.step;
        } else if (key == "seed") {
            ls >> ckpt.seed;
        } else if (key == "config_digest") {
            ls >> ckpt.config_digest;
        } else if (key == "model") {
            int causal = 0, final_ln = 1;
            ls >> cfg.vocab_size >> cfg.hidden >> cfg.max_seq_len >> cfg.n_layers >>
                cfg.n_heads >> cfg.d_ff >> causal >> final_ln;
            cfg.causal = causal != 0;
            cfg.final_ln = final_ln != 0;
        } else if (key == "model_real") {
            ls >> cfg.init_std >> cfg.ln_eps;
        } else if (key == "opt_step") {
            ls >> opt_step;
        } else if (key == "tensors") {
            ls >> n_tensors;
        } else if (key == "tensor") {
            std::string name, dtype;
            std::size_t ndim = 0;
            ls >> name >> dtype >> ndim;
            if (dtype != ckpt_detail::dtype_code<T>())
                throw DataError("checkpoint dtype " + dtype + " does not match loader");
            Rec r;
            r.shape.resize(ndim);
            for (std::size_t d = 0; d < ndim; ++d) ls >> r.shape[d];
            ls >> r.offset;
            if (!ls) throw DataError("malformed tensor record: " + line);
            recs.emplace(name, std::move(r));
        } else if (!key.empty()) {
            throw DataError("unknown manifest record '" + key + "'");
        }
    }
    if (recs.size() != n_tensors) throw DataError("manifest tensor count mismatch");

    auto read_into = [&](const std::string& name, T* dst, std::size_t numel,
                         const Shape& expect) {
        auto it = recs.find(name);
        if (it == recs.end()) throw DataError("checkpoint missing tensor '" + name + "'");
        if (it->second.shape != expect)
            throw DataError("tensor '" + name + "' has shape " + shape_str(it->second.shape) +
                            ", expected " + shape_str(expect));
        const std::size_t begin = payload_start + static_cast<std::size_t>(it->second.offset);
        const std::size_t nbytes = numel * sizeof(T);
        if (begin + nbytes > bytes.size()) throw DataError("truncated checkpoint payload");
        std::memcpy(dst, bytes.data() + begin, nbytes);
    };

    cfg.validate();
    ckpt.params = init_params<T>(cfg, 0);
    if (recs.count("untied_head"))
        ckpt.params.untied_head = make_tensor<T>(
            {static_cast<std::size_t>(cfg.vocab_size), static_cast<std::size_t>(cfg.hidden)},
            true);
    ckpt.params.for_each([&](const std::string& name, const Tensor<T>& t) {
        read_into(name, t->data(), t->numel(), t->shape());
    });
    if (opt_step >= 0) {
        auto st = OptimizerState<T>::for_params(ckpt.params.all());
        st.step = opt_step;
        std::size_t pi = 0;
        ckpt.params.for_each([&](const std::string& name, const Tensor<T>& t) {
            read_into("opt.m." + name, st.m[pi].data(), t->numel(), {t->numel()});
            read_into("opt.v." + name, st.v[pi].data(), t->numel(), {t->numel()});
            ++pi;
        });
        ckpt.opt = std::move(st);
    }
    ckpt.validate();
    return ckpt;
}

template <class T>
void save_checkpoint(const Checkpoint<T>& ckpt, const std::string& path) {
    const std::string bytes = serialize_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for '" + path + "'");
}

template <class T>
Checkpoint<T> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return deserialize_checkpoint<T>(buf.str());
}

}  // namespace hlm
