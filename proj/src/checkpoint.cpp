#include "uqadv/checkpoint.hpp"

#include <fstream>

#include "uqadv/io.hpp"

namespace uqadv {

namespace {

constexpr std::string_view kMagic = "UQAD";

void write_spec(io::BinaryWriter& w, const NetworkSpec& spec) {
    w.u32(static_cast<std::uint32_t>(spec.input_dim));
    w.u32(static_cast<std::uint32_t>(spec.hidden_sizes.size()));
    for (Index h : spec.hidden_sizes) w.u32(static_cast<std::uint32_t>(h));
    w.u8(static_cast<std::uint8_t>(spec.activation));
    w.u32(static_cast<std::uint32_t>(spec.num_classes));
    w.f64(spec.dropout_rate);
    w.u8(static_cast<std::uint8_t>(spec.feature_mode));
}

NetworkSpec read_spec(io::BinaryReader& r, const std::string& source) {
    NetworkSpec spec;
    spec.input_dim = r.u32();
    const std::uint32_t layers = r.u32();
    if (layers > 1024) throw FormatError(source + ": implausible hidden layer count");
    for (std::uint32_t i = 0; i < layers; ++i) spec.hidden_sizes.push_back(r.u32());
    const std::uint8_t act = r.u8();
    if (act > 1) throw FormatError(source + ": unknown activation code");
    spec.activation = static_cast<Activation>(act);
    spec.num_classes = r.u32();
    spec.dropout_rate = r.f64();
    const std::uint8_t mode = r.u8();
    if (mode > 1) throw FormatError(source + ": unknown feature mode code");
    spec.feature_mode = static_cast<FeatureMode>(mode);
    try {
        spec.validate();
    } catch (const Error& e) {
        throw FormatError(source + ": " + e.what());
    }
    return spec;
}

std::uint32_t read_header(io::BinaryReader& r) {
    r.expect_magic(kMagic);
    return r.u32();
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    return out;
}

PosteriorEnsemble read_ensemble_body(io::BinaryReader& r, const std::string& source) {
    auto spec = std::make_shared<const NetworkSpec>(read_spec(r, source));
    const std::uint8_t kind = r.u8();
    if (kind > 2) throw FormatError(source + ": unknown member kind");
    const std::uint32_t count = r.u32();
    if (count == 0) throw FormatError(source + ": ensemble has no members");
    Index mask_len = 0;
    for (Index h : spec->hidden_sizes) mask_len += h;

    std::vector<EnsembleMember> members;
    Eigen::VectorXd weights(count);
    for (std::uint32_t m = 0; m < count; ++m) {
        weights[m] = r.f64();
        EnsembleMember member{ParamVector{spec, r.f64s(spec->param_count())}, std::nullopt};
        if (r.u8()) {
            const Eigen::VectorXd flat = r.f64s(mask_len);
            DropoutMask mask;
            Index at = 0;
            for (Index h : spec->hidden_sizes) {
                mask.keep.push_back(flat.segment(at, h));
                at += h;
            }
            member.mask = std::move(mask);
        }
        members.push_back(std::move(member));
    }
    r.expect_end();
    PosteriorEnsemble e = make_ensemble(spec, static_cast<MemberKind>(kind), std::move(members));
    e.weights = weights;
    return e;
}

}  // namespace

void write_params(std::ostream& out, const ParamVector& params) {
    io::BinaryWriter w(out);
    w.bytes(kMagic);
    w.u32(kModelFormatVersion);
    write_spec(w, params.network());
    w.f64s(params.values);
}

ParamVector read_params(std::istream& in, const std::string& source) {
    io::BinaryReader r(in, source);
    const std::uint32_t version = read_header(r);
    if (version != kModelFormatVersion)
        throw FormatError(source + ": expected model checkpoint version 1, got " + std::to_string(version));
    const NetworkSpec spec = read_spec(r, source);
    Eigen::VectorXd values = r.f64s(spec.param_count());
    r.expect_end();
    return make_params(spec, std::move(values));
}

void write_ensemble(std::ostream& out, const PosteriorEnsemble& ensemble) {
    ensemble.validate();
    io::BinaryWriter w(out);
    w.bytes(kMagic);
    w.u32(kEnsembleFormatVersion);
    write_spec(w, *ensemble.spec);
    w.u8(static_cast<std::uint8_t>(ensemble.kind));
    w.u32(static_cast<std::uint32_t>(ensemble.members.size()));
    for (std::size_t m = 0; m < ensemble.members.size(); ++m) {
        const EnsembleMember& member = ensemble.members[m];
        w.f64(ensemble.weights[static_cast<Index>(m)]);
        w.f64s(member.params.values);
        w.u8(member.mask ? 1 : 0);
        if (member.mask)
            for (const auto& k : member.mask->keep) w.f64s(k);
    }
}

PosteriorEnsemble read_ensemble(std::istream& in, const std::string& source) {
    io::BinaryReader r(in, source);
    const std::uint32_t version = read_header(r);
    if (version != kEnsembleFormatVersion)
        throw FormatError(source + ": expected ensemble checkpoint version 2, got " + std::to_string(version));
    return read_ensemble_body(r, source);
}

void save_params(const std::filesystem::path& path, const ParamVector& params) {
    auto out = open_out(path);
    write_params(out, params);
}

ParamVector load_params(const std::filesystem::path& path) {
    auto in = open_in(path);
    return read_params(in, path.string());
}

void save_ensemble(const std::filesystem::path& path, const PosteriorEnsemble& ensemble) {
    auto out = open_out(path);
    write_ensemble(out, ensemble);
}

PosteriorEnsemble load_ensemble(const std::filesystem::path& path) {
    auto in = open_in(path);
    return read_ensemble(in, path.string());
}

PosteriorEnsemble load_any(const std::filesystem::path& path) {
    auto in = open_in(path);
    io::BinaryReader r(in, path.string());
    const std::uint32_t version = read_header(r);
    if (version == kEnsembleFormatVersion) return read_ensemble_body(r, path.string());
    if (version != kModelFormatVersion)
        throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    const NetworkSpec spec = read_spec(r, path.string());
    Eigen::VectorXd values = r.f64s(spec.param_count());
    r.expect_end();
    return deterministic_ensemble(make_params(spec, std::move(values)));
}

}  // namespace uqadv
