// SPDX-License-Identifier: Apache-2.0
#pragma once

// Degradation-conditioned Morton-scan restoration network.
//
// Feature maps are [C x H x W]; inside a scan block tokens are columns of a
// channel-major [channels x L] matrix, L = H * W.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "modem/layers.hpp"
#include "modem/scan_order.hpp"

namespace modem::nn {

/// Settings shared by every scan block in a network.
struct BlockOptions {
    std::size_t expand = 2;   // d_inner = expand * channels
    std::size_t state = 4;    // N
    std::size_t dt_rank = 4;  // width of the timescale chunk
    scan::ScanSpec scan{};
    bool bidirectional = false;  // sum forward and reversed traversals
    bool zero_init_outputs = false;

    std::size_t d_attn() const { return dt_rank + 2 * state; }
};

struct DdemConfig {
    std::size_t channels = 96;
    std::size_t groups = 2;
    std::size_t group_depth = 2;
    std::size_t stem_stride = 1;
    std::size_t c_d = 96;
    std::size_t c_d1 = 16;
    std::size_t c_d2 = 16;
};

struct BackboneConfig {
    std::vector<std::size_t> depths{4, 4, 6, 8, 6, 4, 4};
    std::size_t refine = 4;
    std::size_t channels = 36;

    std::size_t levels() const { return (depths.size() + 1) / 2; }
};

struct ModelConfig {
    BackboneConfig backbone;
    DdemConfig ddem;
    BlockOptions block;
};

/// Outputs of the degradation estimator.
struct Priors {
    ad::Var z_tilde;  // [4 C_d]
    ad::Var z0;       // [C_d]
    ad::Var z1;       // [C_d1 x C_d2]
};

/// Per-level modulation inputs handed to conditioned scan blocks.
struct Conditioning {
    ad::Var scale;  // [d_inner]
    ad::Var shift;  // [d_inner]
    ad::Var z1;
};

/// out = scale * x + shift, per channel.
ad::Var feature_modulation(ad::Var x, ad::Var scale, ad::Var shift);

/// Linear(C_d -> 2 d_inner) split into scale and shift; starts as the identity modulation.
class ModulationAdapter {
  public:
    ModulationAdapter() = default;
    ModulationAdapter(std::string name, std::size_t c_d, std::size_t d_inner);

    Conditioning operator()(ad::Tape &tape, const Priors &priors) const;
    void parameters(ParamList &out) { linear.parameters(out); }

    Linear linear;
    std::size_t d_inner = 0;
};

/// Token projection mixed by a softmax attention matrix derived from the kernel prior.
class SelectiveAttention {
  public:
    SelectiveAttention() = default;
    SelectiveAttention(std::string name, std::size_t d_inner, std::size_t d_attn, std::size_t c_d1,
                       std::size_t c_d2, Rng &rng);

    /// Row-stochastic [d_attn x d_attn] matrix.
    ad::Var attention(ad::Tape &tape, ad::Var z1) const;
    /// seq [d_inner x L] -> [d_attn x L]; column k is S^T (W_F seq_k).
    ad::Var operator()(ad::Tape &tape, ad::Var seq, ad::Var z1) const;
    void parameters(ParamList &out);

    Linear proj;    // W_F, no bias
    Linear kernel;  // W_Z, vec(Z1) -> d_attn^2, no bias
    std::size_t d_attn = 0;
};

struct ScanParams {
    ad::Var delta;  // [d_inner x L], positive
    ad::Var B;      // [N x L]
    ad::Var C;      // [N x L]
};

/// Splits token features into (dt_rank, N, N) chunks and maps them to delta, B, C.
class ScanParamHead {
  public:
    ScanParamHead() = default;
    ScanParamHead(std::string name, std::size_t d_inner, std::size_t dt_rank, std::size_t state,
                  Rng &rng);

    ScanParams operator()(ad::Tape &tape, ad::Var features) const;
    void parameters(ParamList &out);

    Linear dt_proj;  // W_delta with the positivity bias
    Linear b_proj;   // W_B, no bias
    Linear c_proj;   // W_C, no bias
    std::size_t dt_rank = 0, state = 0;
};

/// Values fed to the scan kernel, captured for visualization.
struct ScanTrace {
    Tensor seq, delta, A, B, C, D;
    scan::ScanPermutation order;
};

/// Cached permutation for an (H, W, kind) triple; safe to call concurrently.
const scan::ScanPermutation &cached_order(std::size_t height, std::size_t width,
                                          const scan::ScanSpec &spec);

class Mos2d {
  public:
    Mos2d() = default;
    Mos2d(std::string name, std::size_t channels, bool conditioned, const BlockOptions &opt,
          const DdemConfig &prior_dims, Rng &rng);

    /// [C x H x W] -> [C x H x W]. Conditioned blocks require `cond`, others forbid it.
    ad::Var operator()(ad::Tape &tape, ad::Var x, const Conditioning *cond,
                       ScanTrace *trace = nullptr) const;
    void parameters(ParamList &out);

    Linear in_proj;   // C -> 2 d_inner (u, gate), no bias
    Linear x_proj;    // unconditioned token head, d_inner -> d_attn
    SelectiveAttention dsam;
    ScanParamHead head;
    Parameter a_log;  // [d_inner x N], A = -exp(a_log)
    Parameter skip;   // D, [d_inner]
    Linear out_proj;  // d_inner -> C, no bias
    bool conditioned = false;
    BlockOptions opt;
    std::size_t d_inner = 0;
};

/// Scan block followed by a conv + channel-attention block, each residual.
class Mdsl {
  public:
    Mdsl() = default;
    Mdsl(std::string name, std::size_t channels, bool conditioned, const BlockOptions &opt,
         const DdemConfig &prior_dims, Rng &rng);

    ad::Var operator()(ad::Tape &tape, ad::Var x, const Conditioning *cond,
                       ScanTrace *trace = nullptr) const;
    void parameters(ParamList &out);

    LayerNorm norm1;
    Mos2d mos;
    LayerNorm norm2;
    Conv2d conv;
    ChannelAttention cab;
};

class Ddem {
  public:
    Ddem() = default;
    Ddem(std::string name, std::size_t in_channels, const DdemConfig &cfg, const BlockOptions &opt,
         Rng &rng);

    Priors operator()(ad::Tape &tape, ad::Var input) const;
    /// Kernel prior of a feature map: P1(F) P2(F)^T / (H W).
    ad::Var kernel_prior(ad::Tape &tape, ad::Var features) const;
    void parameters(ParamList &out);

    std::size_t in_channels = 0;
    Conv2d stem;
    std::vector<Mdsl> blocks;
    Linear mlp1, mlp2, to_z0;
    Linear p1, p2;  // 1x1 convolutions, as linear maps over channels
};

class Backbone {
  public:
    Backbone() = default;
    Backbone(std::string name, const ModelConfig &cfg, Rng &rng);

    /// Restores a [3 x H x W] image given the priors; any H, W >= 1 via reflect padding.
    ad::Var operator()(ad::Tape &tape, ad::Var lq, const Priors &priors) const;
    void parameters(ParamList &out);

    /// Scan layers in forward order, for inspection.
    std::vector<const Mdsl *> layers() const;
    /// Captures the scan inputs of layer `i` on the next forward; nullptr disables.
    void set_trace(std::size_t layer, ScanTrace *trace);

    std::size_t levels = 0;
    std::size_t multiple = 1;  // required divisibility of padded extents
    Conv2d embed;
    std::vector<std::vector<Mdsl>> encoder;
    std::vector<Conv2d> down;
    std::vector<Mdsl> bottleneck;
    std::vector<Conv2d> up;
    std::vector<Conv2d> fuse;
    std::vector<std::vector<Mdsl>> decoder;  // decoder[l] runs at level l
    std::vector<Mdsl> refine;
    Conv2d output;
    std::vector<ModulationAdapter> adapters;  // one per level

  private:
    ad::Var run_group(ad::Tape &tape, const std::vector<Mdsl> &group, ad::Var x,
                      const Conditioning &cond) const;

    std::size_t trace_layer_ = 0;
    ScanTrace *trace_ = nullptr;
};

/// Backbone plus the ground-truth-aware estimator and, from stage 2 on, the
/// degraded-only estimator.
class Modem {
  public:
    Modem(const ModelConfig &cfg, std::uint64_t seed, bool with_student);
    Modem(const Modem &) = delete;
    Modem &operator=(const Modem &) = delete;

    Backbone backbone;
    Ddem teacher;                  // input concat(LQ, GT)
    std::unique_ptr<Ddem> student; // input LQ only
    ModelConfig config;

    ParamList parameters();
    ParamList backbone_parameters();
    ParamList teacher_parameters();
    ParamList student_parameters();

    /// Creates the student from the teacher: identical weights, with the stem
    /// keeping only the input slice that sees the degraded image.
    void init_student_from_teacher();
};

}  // namespace modem::nn
