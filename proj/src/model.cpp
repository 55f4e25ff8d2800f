// SPDX-License-Identifier: Apache-2.0
#include "modem/model.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <tuple>

#include "modem/ops.hpp"
#include "modem/ssm.hpp"

namespace modem::nn {

namespace {

void zero(Parameter &p) { std::fill(p.value.storage().begin(), p.value.storage().end(), 0.0); }

void rename_prefix(ParamList &params, const std::string &from, const std::string &to) {
    for (Parameter *p : params)
        if (p->name.rfind(from, 0) == 0) p->name = to + p->name.substr(from.size());
}

}  // namespace

ad::Var feature_modulation(ad::Var x, ad::Var scale, ad::Var shift) {
    if (scale.shape() != Shape{x.shape()[0]} || shift.shape() != scale.shape())
        throw ShapeError("modulation coefficients must be one per channel of " +
                         shape_str(x.shape()));
    return ad::add(ad::mul(x, scale), shift);
}

ModulationAdapter::ModulationAdapter(std::string name, std::size_t c_d, std::size_t d_inner_)
    : d_inner(d_inner_) {
    linear.in = c_d;
    linear.out = 2 * d_inner;
    linear.weight = {name + ".weight", Tensor({2 * d_inner, c_d})};
    Tensor b({2 * d_inner});
    for (std::size_t i = 0; i < d_inner; ++i) b[i] = 1.0;
    linear.bias = {name + ".bias", b};
}

Conditioning ModulationAdapter::operator()(ad::Tape &tape, const Priors &priors) const {
    ad::Var v = linear(tape, priors.z0);
    return {ad::slice0(v, 0, d_inner), ad::slice0(v, d_inner, d_inner), priors.z1};
}

SelectiveAttention::SelectiveAttention(std::string name, std::size_t d_inner, std::size_t d_attn_,
                                       std::size_t c_d1, std::size_t c_d2, Rng &rng)
    : proj(name + ".w_f", d_inner, d_attn_, rng, false),
      kernel(name + ".w_z", c_d1 * c_d2, d_attn_ * d_attn_, rng, false),
      d_attn(d_attn_) {}

ad::Var SelectiveAttention::attention(ad::Tape &tape, ad::Var z1) const {
    if (z1.value().numel() != kernel.in)
        throw ShapeError("kernel prior has " + shape_str(z1.shape()) + ", expected " +
                         std::to_string(kernel.in) + " elements");
    ad::Var logits = kernel(tape, ad::reshape(z1, {kernel.in}));
    return ad::softmax(ad::reshape(logits, {d_attn, d_attn}), 1);
}

ad::Var SelectiveAttention::operator()(ad::Tape &tape, ad::Var seq, ad::Var z1) const {
    return ad::matmul(ad::transpose(attention(tape, z1)), proj(tape, seq));
}

void SelectiveAttention::parameters(ParamList &out) {
    proj.parameters(out);
    kernel.parameters(out);
}

ScanParamHead::ScanParamHead(std::string name, std::size_t d_inner, std::size_t dt_rank_,
                             std::size_t state_, Rng &rng)
    : dt_proj(name + ".w_delta", dt_rank_, d_inner, rng),
      b_proj(name + ".w_b", state_, state_, rng, false),
      c_proj(name + ".w_c", state_, state_, rng, false),
      dt_rank(dt_rank_),
      state(state_) {
    // Bias = softplus^-1(dt) with dt log-uniform in [1e-3, 1e-1].
    std::uniform_real_distribution<double> u(std::log(1e-3), std::log(1e-1));
    for (double &b : dt_proj.bias.value.storage()) {
        const double dt = std::exp(u(rng));
        b = dt + std::log(-std::expm1(-dt));
    }
}

ScanParams ScanParamHead::operator()(ad::Tape &tape, ad::Var f) const {
    if (f.shape().size() != 2 || f.shape()[0] != dt_rank + 2 * state)
        throw ShapeError("scan parameter features must have " + std::to_string(dt_rank + 2 * state) +
                         " rows, got " + shape_str(f.shape()));
    ad::Var fd = ad::slice0(f, 0, dt_rank);
    ad::Var fb = ad::slice0(f, dt_rank, state);
    ad::Var fc = ad::slice0(f, dt_rank + state, state);
    return {ad::softplus(dt_proj(tape, fd)), b_proj(tape, fb), c_proj(tape, fc)};
}

void ScanParamHead::parameters(ParamList &out) {
    dt_proj.parameters(out);
    b_proj.parameters(out);
    c_proj.parameters(out);
}

const scan::ScanPermutation &cached_order(std::size_t height, std::size_t width,
                                          const scan::ScanSpec &spec) {
    using Key = std::tuple<std::size_t, std::size_t, int, std::size_t>;
    static std::mutex mu;
    static std::map<Key, std::unique_ptr<scan::ScanPermutation>> cache;
    const Key key{height, width, static_cast<int>(spec.kind), spec.window};
    std::lock_guard lock(mu);
    auto &slot = cache[key];
    if (!slot) slot = std::make_unique<scan::ScanPermutation>(scan::build_order(height, width, spec));
    return *slot;
}

Mos2d::Mos2d(std::string name, std::size_t channels, bool conditioned_, const BlockOptions &opt_,
             const DdemConfig &dims, Rng &rng)
    : conditioned(conditioned_), opt(opt_), d_inner(opt_.expand * channels) {
    in_proj = Linear(name + ".in_proj", channels, 2 * d_inner, rng, false);
    if (conditioned)
        dsam = SelectiveAttention(name + ".dsam", d_inner, opt.d_attn(), dims.c_d1, dims.c_d2, rng);
    else
        x_proj = Linear(name + ".x_proj", d_inner, opt.d_attn(), rng, false);
    head = ScanParamHead(name + ".head", d_inner, opt.dt_rank, opt.state, rng);
    a_log = {name + ".a_log", Tensor({d_inner, opt.state})};
    for (std::size_t c = 0; c < d_inner; ++c)
        for (std::size_t n = 0; n < opt.state; ++n)
            a_log.value.at(c, n) = std::log(static_cast<double>(n + 1));
    skip = {name + ".d", Tensor({d_inner}, 1.0)};
    out_proj = Linear(name + ".out_proj", d_inner, channels, rng, false);
    if (opt.zero_init_outputs) zero(out_proj.weight);
}

ad::Var Mos2d::operator()(ad::Tape &tape, ad::Var x, const Conditioning *cond,
                          ScanTrace *trace) const {
    if (conditioned && !cond) throw ContractError("conditioned scan block needs degradation priors");
    if (!conditioned && cond) throw ContractError("unconditioned scan block takes no priors");
    if (x.shape().size() != 3) throw ShapeError("scan block expects [C x H x W]");
    const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    ad::Var proj = in_proj(tape, ad::reshape(x, {c, h * w}));
    ad::Var u = ad::slice0(proj, 0, d_inner);
    ad::Var gate = ad::slice0(proj, d_inner, d_inner);
    if (cond) u = feature_modulation(u, cond->scale, cond->shift);

    ad::Var A = ad::mul_scalar(ad::exp(tape.param(a_log)), -1.0);
    ad::Var D = tape.param(skip);
    auto run = [&](const scan::ScanPermutation &order, ScanTrace *t) {
        ad::Var seq = scan::gather(u, order);
        ad::Var feats = cond ? dsam(tape, seq, cond->z1) : x_proj(tape, seq);
        ScanParams sp = head(tape, feats);
        if (t) *t = {seq.value(), sp.delta.value(), A.value(), sp.B.value(), sp.C.value(), D.value(), order};
        return scan::scatter(ssm::selective_scan(seq, sp.delta, A, sp.B, sp.C, D), order);
    };
    const scan::ScanPermutation &order = cached_order(h, w, opt.scan);
    ad::Var y = run(order, trace);
    if (opt.bidirectional) y = ad::add(y, run(order.reversed(), nullptr));
    ad::Var out = out_proj(tape, ad::mul(y, ad::silu(gate)));
    return ad::reshape(out, {c, h, w});
}

void Mos2d::parameters(ParamList &out) {
    in_proj.parameters(out);
    if (conditioned)
        dsam.parameters(out);
    else
        x_proj.parameters(out);
    head.parameters(out);
    out.push_back(&a_log);
    out.push_back(&skip);
    out_proj.parameters(out);
}

Mdsl::Mdsl(std::string name, std::size_t channels, bool conditioned, const BlockOptions &opt,
           const DdemConfig &dims, Rng &rng)
    : norm1(name + ".norm1", channels),
      mos(name + ".mos", channels, conditioned, opt, dims, rng),
      norm2(name + ".norm2", channels),
      conv(name + ".conv", channels, channels, 3, rng),
      cab(name + ".cab", channels, rng) {
    if (opt.zero_init_outputs) conv.zero();
}

ad::Var Mdsl::operator()(ad::Tape &tape, ad::Var x, const Conditioning *cond,
                         ScanTrace *trace) const {
    ad::Var mid = ad::add(mos(tape, norm1(tape, x), cond, trace), x);
    return ad::add(cab(tape, conv(tape, norm2(tape, mid))), mid);
}

void Mdsl::parameters(ParamList &out) {
    norm1.parameters(out);
    mos.parameters(out);
    norm2.parameters(out);
    conv.parameters(out);
    cab.parameters(out);
}

Ddem::Ddem(std::string name, std::size_t in, const DdemConfig &cfg, const BlockOptions &opt,
           Rng &rng)
    : in_channels(in), stem(name + ".stem", in, cfg.channels, 3, rng, cfg.stem_stride) {
    for (std::size_t g = 0; g < cfg.groups; ++g)
        for (std::size_t b = 0; b < cfg.group_depth; ++b)
            blocks.emplace_back(name + ".group" + std::to_string(g) + "." + std::to_string(b),
                                cfg.channels, false, opt, cfg, rng);
    mlp1 = Linear(name + ".mlp1", cfg.channels, 4 * cfg.c_d, rng);
    mlp2 = Linear(name + ".mlp2", 4 * cfg.c_d, 4 * cfg.c_d, rng);
    to_z0 = Linear(name + ".to_z0", 4 * cfg.c_d, cfg.c_d, rng);
    p1 = Linear(name + ".p1", cfg.channels, cfg.c_d1, rng);
    p2 = Linear(name + ".p2", cfg.channels, cfg.c_d2, rng);
}

ad::Var Ddem::kernel_prior(ad::Tape &tape, ad::Var f) const {
    const std::size_t c = f.shape()[0], l = f.shape()[1] * f.shape()[2];
    ad::Var flat = ad::reshape(f, {c, l});
    ad::Var gram = ad::matmul(p1(tape, flat), ad::transpose(p2(tape, flat)));
    return ad::mul_scalar(gram, 1.0 / static_cast<double>(l));
}

Priors Ddem::operator()(ad::Tape &tape, ad::Var input) const {
    if (input.shape().size() != 3 || input.shape()[0] != in_channels)
        throw ContractError("degradation estimator expects " + std::to_string(in_channels) +
                            " input channels, got " + shape_str(input.shape()));
    // A strided stem needs (extent - 1) divisible by the stride; reflect-pad up to it.
    const std::size_t st = stem.stride;
    const std::size_t ph = (st - (input.shape()[1] - 1) % st) % st, pw = (st - (input.shape()[2] - 1) % st) % st;
    ad::Var f = stem(tape, ph || pw ? ad::reflect_pad(input, ph, pw) : input);
    for (const Mdsl &b : blocks) f = b(tape, f, nullptr);
    ad::Var zt = mlp2(tape, ad::silu(mlp1(tape, ad::global_avg_pool(f))));
    return {zt, ad::silu(to_z0(tape, zt)), kernel_prior(tape, f)};
}

void Ddem::parameters(ParamList &out) {
    stem.parameters(out);
    for (Mdsl &b : blocks) b.parameters(out);
    mlp1.parameters(out);
    mlp2.parameters(out);
    to_z0.parameters(out);
    p1.parameters(out);
    p2.parameters(out);
}

Backbone::Backbone(std::string name, const ModelConfig &cfg, Rng &rng) {
    const auto &bc = cfg.backbone;
    if (bc.depths.empty() || bc.depths.size() % 2 == 0)
        throw ContractError("group depths must list encoder, bottleneck and decoder symmetrically");
    levels = bc.levels();
    multiple = std::size_t{1} << (levels - 1);
    if (levels > 1 && bc.channels % 2 != 0)
        throw ContractError("base channels must be even for downsampling");
    auto ch = [&](std::size_t l) { return bc.channels << l; };
    auto group = [&](const std::string &gname, std::size_t depth, std::size_t channels) {
        std::vector<Mdsl> g;
        g.reserve(depth);
        for (std::size_t i = 0; i < depth; ++i)
            g.emplace_back(gname + "." + std::to_string(i), channels, true, cfg.block, cfg.ddem, rng);
        return g;
    };
    embed = Conv2d(name + ".embed", 3, ch(0), 3, rng);
    for (std::size_t l = 0; l + 1 < levels; ++l) {
        encoder.push_back(group(name + ".enc" + std::to_string(l), bc.depths[l], ch(l)));
        down.emplace_back(name + ".down" + std::to_string(l), ch(l), ch(l) / 2, 3, rng);
    }
    bottleneck = group(name + ".bottleneck", bc.depths[levels - 1], ch(levels - 1));
    up.resize(levels - 1);
    fuse.resize(levels - 1);
    decoder.resize(levels - 1);
    for (std::size_t l = levels - 1; l-- > 0;) {
        up[l] = Conv2d(name + ".up" + std::to_string(l), ch(l + 1), 2 * ch(l + 1), 3, rng);
        fuse[l] = Conv2d(name + ".fuse" + std::to_string(l), 2 * ch(l), ch(l), 1, rng);
        decoder[l] = group(name + ".dec" + std::to_string(l), bc.depths[2 * (levels - 1) - l], ch(l));
    }
    refine = group(name + ".refine", bc.refine, ch(0));
    output = Conv2d(name + ".output", ch(0), 3, 3, rng);
    output.zero();
    for (std::size_t l = 0; l < levels; ++l)
        adapters.emplace_back(name + ".adapter" + std::to_string(l), cfg.ddem.c_d,
                              cfg.block.expand * ch(l));
}

std::vector<const Mdsl *> Backbone::layers() const {
    std::vector<const Mdsl *> out;
    for (const auto &g : encoder)
        for (const Mdsl &m : g) out.push_back(&m);
    for (const Mdsl &m : bottleneck) out.push_back(&m);
    for (std::size_t l = decoder.size(); l-- > 0;)
        for (const Mdsl &m : decoder[l]) out.push_back(&m);
    for (const Mdsl &m : refine) out.push_back(&m);
    return out;
}

void Backbone::set_trace(std::size_t layer, ScanTrace *trace) {
    const std::size_t n = layers().size();
    if (trace && layer >= n)
        throw ContractError("layer index " + std::to_string(layer) + " outside [0, " +
                            std::to_string(n) + ")");
    trace_layer_ = layer;
    trace_ = trace;
}

ad::Var Backbone::run_group(ad::Tape &tape, const std::vector<Mdsl> &group, ad::Var x,
                            const Conditioning &cond) const {
    const Mdsl *target = trace_ ? layers()[trace_layer_] : nullptr;
    for (const Mdsl &m : group) x = m(tape, x, &cond, &m == target ? trace_ : nullptr);
    return x;
}

ad::Var Backbone::operator()(ad::Tape &tape, ad::Var lq, const Priors &priors) const {
    if (lq.shape().size() != 3 || lq.shape()[0] != 3)
        throw ShapeError("backbone expects a [3 x H x W] image, got " + shape_str(lq.shape()));
    const std::size_t h = lq.shape()[1], w = lq.shape()[2];
    const std::size_t ph = (h + multiple - 1) / multiple * multiple;
    const std::size_t pw = (w + multiple - 1) / multiple * multiple;
    ad::Var x = (ph != h || pw != w) ? ad::reflect_pad(lq, ph - h, pw - w) : lq;

    std::vector<Conditioning> cond;
    for (const ModulationAdapter &a : adapters) cond.push_back(a(tape, priors));

    ad::Var f = embed(tape, x);
    std::vector<ad::Var> skips;
    for (std::size_t l = 0; l + 1 < levels; ++l) {
        f = run_group(tape, encoder[l], f, cond[l]);
        skips.push_back(f);
        f = ad::pixel_unshuffle(down[l](tape, f), 2);
    }
    f = run_group(tape, bottleneck, f, cond[levels - 1]);
    for (std::size_t l = levels - 1; l-- > 0;) {
        f = ad::pixel_shuffle(up[l](tape, f), 2);
        f = fuse[l](tape, ad::concat0(f, skips[l]));
        f = run_group(tape, decoder[l], f, cond[l]);
    }
    f = run_group(tape, refine, f, cond[0]);
    ad::Var out = ad::add(output(tape, f), x);
    return (ph != h || pw != w) ? ad::crop(out, h, w) : out;
}

void Backbone::parameters(ParamList &out) {
    embed.parameters(out);
    for (std::size_t l = 0; l < encoder.size(); ++l) {
        for (Mdsl &m : encoder[l]) m.parameters(out);
        down[l].parameters(out);
    }
    for (Mdsl &m : bottleneck) m.parameters(out);
    for (std::size_t l = decoder.size(); l-- > 0;) {
        up[l].parameters(out);
        fuse[l].parameters(out);
        for (Mdsl &m : decoder[l]) m.parameters(out);
    }
    for (Mdsl &m : refine) m.parameters(out);
    output.parameters(out);
    for (ModulationAdapter &a : adapters) a.parameters(out);
}

Modem::Modem(const ModelConfig &cfg, std::uint64_t seed, bool with_student) : config(cfg) {
    Rng rng(seed);
    backbone = Backbone("backbone", cfg, rng);
    teacher = Ddem("ddem_gt", 6, cfg.ddem, cfg.block, rng);
    if (with_student) init_student_from_teacher();
}

ParamList Modem::backbone_parameters() {
    ParamList p;
    backbone.parameters(p);
    return p;
}

ParamList Modem::teacher_parameters() {
    ParamList p;
    teacher.parameters(p);
    return p;
}

ParamList Modem::student_parameters() {
    ParamList p;
    if (student) student->parameters(p);
    return p;
}

ParamList Modem::parameters() {
    ParamList p = backbone_parameters();
    for (Parameter *q : teacher_parameters()) p.push_back(q);
    for (Parameter *q : student_parameters()) p.push_back(q);
    return p;
}

void Modem::init_student_from_teacher() {
    student = std::make_unique<Ddem>(teacher);
    student->in_channels = 3;
    Tensor &w = student->stem.weight.value;
    const std::size_t out = w.dim(0), k = w.dim(2);
    Tensor lq({out, 3, k, k});
    for (std::size_t o = 0; o < out; ++o)
        for (std::size_t i = 0; i < 3 * k * k; ++i) lq[o * 3 * k * k + i] = w[o * 6 * k * k + i];
    w = lq;
    ParamList params = student_parameters();
    rename_prefix(params, "ddem_gt.", "ddem_lq.");
}

}  // namespace modem::nn
