// SPDX-License-Identifier: Apache-2.0
#include "modem/verify.hpp"

#include <algorithm>
#include <functional>

#include "modem/losses.hpp"
#include "modem/model.hpp"
#include "modem/ssm.hpp"

namespace modem {

namespace {

using nn::Rng;

Tensor uniform(const Shape &s, Rng &rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    Tensor t(s);
    for (double &v : t.storage()) v = d(rng);
    return t;
}

nn::BlockOptions tiny_block(const scan::ScanSpec &spec) {
    nn::BlockOptions o;
    o.scan = spec;
    o.expand = 1;
    o.state = 2;
    o.dt_rank = 1;
    return o;
}

nn::DdemConfig tiny_priors() {
    // Two-channel LayerNorm is close to a sign function, which FD cannot resolve.
    nn::DdemConfig d;
    d.channels = 4;
    d.groups = 1;
    d.group_depth = 1;
    d.c_d = 2;
    d.c_d1 = 2;
    d.c_d2 = 2;
    return d;
}

struct Case {
    ScalarGraph graph;
    std::vector<Tensor> inputs;
    nn::ParamList params;
};

/// Projection of an output onto fixed random weights gives a scalar with a dense gradient.
struct Probe {
    Rng &rng;
    std::vector<Tensor> weights;
    std::size_t next = 0;

    ad::Var operator()(ad::Var v) {
        if (next == weights.size()) weights.push_back(uniform(v.shape(), rng));
        return ad::dot(v, weights[next++]);
    }
    void reset() { next = 0; }
};


BlockCheck run(const std::string &name, Case c, const SuiteOptions &opt) {
    GradCheckOptions g;
    g.fault_op = opt.fault_op;
    g.fault_factor = opt.fault_factor;
    BlockCheck out{name, check_gradients(c.graph, c.inputs, c.params, g), false};
    out.passed = out.result.max_rel_error < opt.tolerance;
    return out;
}

}  // namespace

const std::vector<std::string> &gradient_suite_blocks() {
    static const std::vector<std::string> names{"dafm",  "dsam",  "s6_head", "selective_scan",
                                                "mos2d", "mos2d_plain", "cab", "mdsl",
                                                "ddem",  "backbone", "l1", "correlation", "kl"};
    return names;
}

std::vector<BlockCheck> run_gradient_suite(const SuiteOptions &opt) {
    Rng rng(opt.seed);
    const auto block = tiny_block(opt.scan);
    const auto dims = tiny_priors();
    std::vector<BlockCheck> out;
    auto wanted = [&](const std::string &n) {
        return opt.only.empty() || std::find(opt.only.begin(), opt.only.end(), n) != opt.only.end();
    };

    // Module instances must outlive the checks that reference them.
    nn::ModulationAdapter adapter("adapter", dims.c_d, 3);
    nn::SelectiveAttention dsam("dsam", 3, 4, 2, 3, rng);
    nn::ScanParamHead head("head", 3, 2, 2, rng);
    nn::Mos2d mos("mos", 2, true, block, dims, rng);
    auto plain_opt = block;
    plain_opt.bidirectional = true;
    nn::Mos2d plain("plain", 2, false, plain_opt, dims, rng);
    nn::ChannelAttention cab("cab", 4, rng);
    nn::Mdsl mdsl("mdsl", 2, true, block, dims, rng);
    nn::Ddem ddem("ddem", 3, dims, block, rng);
    nn::ModelConfig toy;
    toy.backbone.depths = {1, 1, 1};
    toy.backbone.refine = 1;
    toy.backbone.channels = 4;
    toy.block = block;
    toy.ddem = dims;
    nn::Backbone backbone("backbone", toy, rng);

    Probe probe{rng, {}};
    auto jittered = [&](auto &module) {
        nn::ParamList p;
        module.parameters(p);
        nn::jitter(p, rng, 0.3);
        return p;
    };

    if (wanted("dafm")) {
        probe.weights.clear();
        Case c;
        c.params = jittered(adapter);
        c.inputs = {uniform({3, 5}, rng), uniform({dims.c_d}, rng), uniform({2, 2}, rng)};
        c.graph = [&](ad::Tape &tape, std::span<const ad::Var> v) {
            probe.reset();
            nn::Conditioning k = adapter(tape, {ad::Var(), v[1], v[2]});
            return probe(nn::feature_modulation(v[0], k.scale, k.shift));
        };
        out.push_back(run("dafm", c, opt));
    }
    if (wanted("dsam")) {
        probe.weights.clear();
        Case c;
        c.params = jittered(dsam);
        c.inputs = {uniform({3, 6}, rng), uniform({2, 3}, rng)};
        c.graph = [&](ad::Tape &tape, std::span<const ad::Var> v) {
            probe.reset();
            return probe(dsam(tape, v[0], v[1]));
        };
        out.push_back(run("dsam", c, opt));
    }
    if (wanted("s6_head")) {
        probe.weights.clear();
        Case c;
        c.params = jittered(head);
        c.inputs = {uniform({6, 5}, rng)};
        c.graph = [&](ad::Tape &tape, std::span<const ad::Var> v) {
            probe.reset();
            nn::ScanParams p = head(tape, v[0]);
            return ad::add(ad::add(probe(p.delta), probe(p.B)), probe(p.C));
        };
        out.push_back(run("s6_head", c, opt));
    }
    if (wanted("selective_scan")) {
        probe.weights.clear();
        Case c;
        c.inputs = {uniform({3, 7}, rng), uniform({3, 7}, rng, 0.05, 1.0), uniform({3, 4}, rng, -2.0, -0.1),
                    uniform({4, 7}, rng), uniform({4, 7}, rng), uniform({3}, rng)};
        c.graph = [&](ad::Tape &, std::span<const ad::Var> v) {
            probe.reset();
            return probe(ssm::selective_scan(v[0], v[1], v[2], v[3], v[4], v[5]));
        };
        out.push_back(run("selective_scan", c, opt));
    }
    if (wanted("mos2d")) {
        probe.weights.clear();
        Case c;
        c.params = jittered(mos);
        c.inputs = {uniform({2, 4, 4}, rng), uniform({2}, rng, 0.5, 1.5), uniform({2}, rng),
                    uniform({2, 2}, rng)};
        c.graph = [&](ad::Tape &tape, std::span<const ad::Var> v) {
            probe.reset();
            const nn::Conditioning k{v[1], v[2], v[3]};
            return probe(mos(tape, v[0], &k));
        };
        out.push_back(run("mos2d", c, opt));
    }
    if (wanted("mos2d_plain")) {
        probe.weights.clear();
        Case c;
        c.params = jittered(plain);
        c.inputs = {uniform({2, 3, 5}, rng)};
        c.graph = [&](ad::Tape &tape, std::span<const ad::Var> v) {
            probe.reset();
            return probe(plain(tape, v[0], nullptr));
        };
        out.push_back(run("mos2d_plain", c, opt));
    }
    if (wanted("cab")) {
        probe.weights.clear();
        Case c;
        c.params = jittered(cab);
        c.inputs = {uniform({4, 3, 3}, rng)};
        c.graph = [&](ad::Tape &tape, std::span<const ad::Var> v) {
            probe.reset();
            return probe(cab(tape, v[0]));
        };
        out.push_back(run("cab", c, opt));
    }
    if (wanted("mdsl")) {
        probe.weights.clear();
        Case c;
        c.params = jittered(mdsl);
        c.inputs = {uniform({2, 4, 4}, rng), uniform({2}, rng, 0.5, 1.5), uniform({2}, rng),
                    uniform({2, 2}, rng)};
        c.graph = [&](ad::Tape &tape, std::span<const ad::Var> v) {
            probe.reset();
            const nn::Conditioning k{v[1], v[2], v[3]};
            return probe(mdsl(tape, v[0], &k));
        };
        out.push_back(run("mdsl", c, opt));
    }
    if (wanted("ddem")) {
        probe.weights.clear();
        Case c;
        c.params = jittered(ddem);
        c.inputs = {uniform({3, 4, 4}, rng, 0.0, 1.0)};
        c.graph = [&](ad::Tape &tape, std::span<const ad::Var> v) {
            probe.reset();
            nn::Priors p = ddem(tape, v[0]);
            return ad::add(ad::add(probe(p.z_tilde), probe(p.z0)), probe(p.z1));
        };
        out.push_back(run("ddem", c, opt));
    }
    if (wanted("backbone")) {
        probe.weights.clear();
        Case c;
        c.params = jittered(backbone);
        // 3x5 exercises reflect padding and cropping.
        c.inputs = {uniform({3, 3, 5}, rng, 0.0, 1.0), uniform({dims.c_d}, rng), uniform({2, 2}, rng)};
        c.graph = [&](ad::Tape &tape, std::span<const ad::Var> v) {
            probe.reset();
            return probe(backbone(tape, v[0], {ad::Var(), v[1], v[2]}));
        };
        out.push_back(run("backbone", c, opt));
    }
    if (wanted("l1")) {
        Case c;
        c.inputs = {uniform({3, 4, 4}, rng), uniform({3, 4, 4}, rng)};
        c.graph = [](ad::Tape &, std::span<const ad::Var> v) { return loss::l1(v[0], v[1]); };
        out.push_back(run("l1", c, opt));
    }
    if (wanted("correlation")) {
        Case c;
        c.inputs = {uniform({3, 4, 4}, rng), uniform({3, 4, 4}, rng)};
        c.graph = [](ad::Tape &, std::span<const ad::Var> v) { return loss::correlation(v[0], v[1]); };
        out.push_back(run("correlation", c, opt));
    }
    if (wanted("kl")) {
        // The reference distribution is a constant target; only the estimate is differentiated.
        const Tensor reference = uniform({8}, rng, -2.0, 2.0);
        Case c;
        c.inputs = {uniform({8}, rng, -2.0, 2.0)};
        c.graph = [reference](ad::Tape &tape, std::span<const ad::Var> v) {
            return loss::kl_divergence(tape.constant(reference), v[0]);
        };
        out.push_back(run("kl", c, opt));
    }
    return out;
}

}  // namespace modem
