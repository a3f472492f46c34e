#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "tiergan/error.hpp"
#include "tiergan/gan.hpp"
#include "tiergan/rng.hpp"
#include "tiergan/tensor.hpp"

namespace tiergan {

// Serialized training state: parameters, optimizer moments, batch-norm
// running statistics, rng state, epoch counter. Fixed little-endian layout.
struct Checkpoint {
    static constexpr std::uint32_t current_version = 1;
    static constexpr std::uint32_t status_ok = 0;
    static constexpr std::uint32_t status_diverged = 1;

    std::uint32_t version = current_version;
    std::uint32_t status = status_ok;
    std::uint32_t epoch = 0;
    std::uint64_t g_digest = 0, d_digest = 0;
    Rng::State rng_state{};
    std::uint64_t t_g = 0, t_d = 0;
    std::map<std::string, Tensor<float>> tensors;

    bool diverged() const { return status == status_diverged; }
};

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 4);
}

inline void put_u64(std::ostream& out, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 8);
}

inline void put_f32(std::ostream& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

inline std::uint32_t get_u32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (in.gcount() != 4) throw FormatError(path + ": truncated checkpoint");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t get_u64(std::istream& in, const std::string& path) {
    std::uint64_t lo = get_u32(in, path);
    std::uint64_t hi = get_u32(in, path);
    return lo | (hi << 32);
}

inline float get_f32(std::istream& in, const std::string& path) {
    return std::bit_cast<float>(get_u32(in, path));
}

} // namespace detail

// Atomic: writes to a temp file in the target directory, then renames.
inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    const fs::path tmp = target.parent_path() / (target.filename().string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError(tmp.string() + ": cannot open for writing");
        out.write("TGAN", 4);
        detail::put_u32(out, ckpt.version);
        detail::put_u32(out, ckpt.status);
        detail::put_u32(out, ckpt.epoch);
        detail::put_u64(out, ckpt.g_digest);
        detail::put_u64(out, ckpt.d_digest);
        for (std::uint64_t w : ckpt.rng_state) detail::put_u64(out, w);
        detail::put_u64(out, ckpt.t_g);
        detail::put_u64(out, ckpt.t_d);
        detail::put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
        for (const auto& [name, t] : ckpt.tensors) {
            detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
            out.write(name.data(), static_cast<std::streamsize>(name.size()));
            detail::put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
            for (std::size_t d : t.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
            for (float v : t.data) detail::put_f32(out, v);
        }
        if (!out) throw IoError(tmp.string() + ": write failed");
    }
    fs::rename(tmp, target);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path + ": cannot open for reading");
    char magic[4] = {};
    in.read(magic, 4);
    if (in.gcount() != 4 || std::string(magic, 4) != "TGAN")
        throw FormatError(path + ": bad magic (not a checkpoint)");
    Checkpoint ckpt;
    ckpt.version = detail::get_u32(in, path);
    if (ckpt.version != Checkpoint::current_version)
        throw FormatError(path + ": version mismatch: file has " + std::to_string(ckpt.version) +
                          ", expected " + std::to_string(Checkpoint::current_version));
    ckpt.status = detail::get_u32(in, path);
    ckpt.epoch = detail::get_u32(in, path);
    ckpt.g_digest = detail::get_u64(in, path);
    ckpt.d_digest = detail::get_u64(in, path);
    for (std::uint64_t& w : ckpt.rng_state) w = detail::get_u64(in, path);
    ckpt.t_g = detail::get_u64(in, path);
    ckpt.t_d = detail::get_u64(in, path);
    const std::uint32_t count = detail::get_u32(in, path);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = detail::get_u32(in, path);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (in.gcount() != static_cast<std::streamsize>(name_len))
            throw FormatError(path + ": truncated checkpoint");
        const std::uint32_t rank = detail::get_u32(in, path);
        Shape shape(rank);
        for (auto& d : shape) d = detail::get_u32(in, path);
        Tensor<float> t(shape);
        for (float& v : t.data) v = detail::get_f32(in, path);
        ckpt.tensors.emplace(std::move(name), std::move(t));
    }
    return ckpt;
}

// ---- GanPair <-> Checkpoint ----

namespace detail {

inline void pack_model(const Model<float>& m, const std::string& prefix,
                       const AdamState<float>& opt, Checkpoint& ckpt) {
    for (const auto& [name, t] : m.params) ckpt.tensors.emplace(prefix + "." + name, t);
    for (const auto& [key, st] : m.bn_stats) {
        ckpt.tensors.emplace(prefix + ".stats." + key + ".mean", st.mean);
        ckpt.tensors.emplace(prefix + ".stats." + key + ".var", st.var);
    }
    for (const auto& [name, t] : opt.m) ckpt.tensors.emplace(prefix + ".adam.m." + name, t);
    for (const auto& [name, t] : opt.v) ckpt.tensors.emplace(prefix + ".adam.v." + name, t);
}

inline void unpack_model(const Checkpoint& ckpt, const std::string& prefix, Model<float>& m,
                         AdamState<float>& opt, const std::string& path) {
    auto need = [&](const std::string& name) -> const Tensor<float>& {
        auto it = ckpt.tensors.find(name);
        if (it == ckpt.tensors.end())
            throw FormatError(path + ": checkpoint missing tensor '" + name + "'");
        return it->second;
    };
    for (auto& [name, t] : m.params) t = need(prefix + "." + name);
    for (auto& [key, st] : m.bn_stats) {
        st.mean = need(prefix + ".stats." + key + ".mean");
        st.var = need(prefix + ".stats." + key + ".var");
    }
    opt.m.clear();
    opt.v.clear();
    for (const auto& [name, t] : ckpt.tensors) {
        const std::string mp = prefix + ".adam.m.";
        const std::string vp = prefix + ".adam.v.";
        if (name.rfind(mp, 0) == 0) opt.m.emplace(name.substr(mp.size()), t);
        if (name.rfind(vp, 0) == 0) opt.v.emplace(name.substr(vp.size()), t);
    }
}

} // namespace detail

inline Checkpoint make_checkpoint(const GanPair<float>& gan, const Rng& rng, std::uint32_t epoch,
                                  std::uint32_t status = Checkpoint::status_ok) {
    Checkpoint ckpt;
    ckpt.status = status;
    ckpt.epoch = epoch;
    ckpt.g_digest = gan.g.spec.digest();
    ckpt.d_digest = gan.d.spec.digest();
    ckpt.rng_state = rng.state();
    ckpt.t_g = gan.opt_g.t;
    ckpt.t_d = gan.opt_d.t;
    detail::pack_model(gan.g, "G", gan.opt_g, ckpt);
    detail::pack_model(gan.d, "D", gan.opt_d, ckpt);
    return ckpt;
}

// Binds a checkpoint into an existing pair; refuses on model-spec digest
// mismatch so stale checkpoints never load into a different architecture.
inline void restore_gan(const Checkpoint& ckpt, GanPair<float>& gan, Rng& rng,
                        const std::string& path = "<checkpoint>") {
    if (ckpt.g_digest != gan.g.spec.digest() || ckpt.d_digest != gan.d.spec.digest())
        throw FormatError(path + ": model digest mismatch (file G=" + hex64(ckpt.g_digest) +
                          " D=" + hex64(ckpt.d_digest) + ", expected G=" +
                          hex64(gan.g.spec.digest()) + " D=" + hex64(gan.d.spec.digest()) + ")");
    detail::unpack_model(ckpt, "G", gan.g, gan.opt_g, path);
    detail::unpack_model(ckpt, "D", gan.d, gan.opt_d, path);
    gan.opt_g.t = ckpt.t_g;
    gan.opt_d.t = ckpt.t_d;
    rng.set_state(ckpt.rng_state);
}

} // namespace tiergan
