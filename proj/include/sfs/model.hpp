#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sfs/rng.hpp"
#include "sfs/tensor.hpp"

namespace sfs::model {

// Conditional noise predictor on d x d patches: input is c concatenated with
// x_t (4 channels), output a 3-channel noise estimate. Four encoder stages at
// resolutions d, d/2, d/4, d/8 with ResNet blocks, group norm, timestep
// embedding, a self-attention bottleneck, and skip connections.
struct UNetConfig {
    int d = 16;
    int base_width = 32;
    std::vector<int> mults = {1, 1, 2, 2};
    int temb_dim = 128;
    int groups = 8;
    int attn_heads = 4;

    int width(int stage) const { return base_width * mults[stage]; }
    bool operator==(const UNetConfig& o) const {
        return d == o.d && base_width == o.base_width && mults == o.mults &&
               temb_dim == o.temb_dim && groups == o.groups && attn_heads == o.attn_heads;
    }
};

struct Param {
    std::string name;
    Tensor w;
    Tensor g;  // gradient, same shape

    int64_t size() const { return w.size(); }
};

// ---- layer parameter bundles ----

struct ConvP {
    int cin = 0, cout = 0, k = 3, stride = 1, pad = 1;
    Param w;  // [k*k*cin, cout] row-major
    Param b;  // [cout]
};

struct LinearP {
    int in = 0, out = 0;
    Param w;  // [in, out]
    Param b;
};

struct GroupNormP {
    int channels = 0, groups = 0;
    Param gamma, beta;
};

struct ResBlockP {
    int cin = 0, cout = 0;
    GroupNormP gn1, gn2;
    ConvP conv1, conv2;
    LinearP temb;
    ConvP skip;  // 1x1, only if cin != cout
    bool has_skip = false;
};

struct AttentionP {
    int channels = 0, heads = 0;
    GroupNormP gn;
    LinearP qkv;   // C -> 3C
    LinearP proj;  // C -> C
};

// ---- activation storage for one forward pass ----

struct ConvCtx {
    Tensor x;  // saved input
    int oh = 0, ow = 0;
};
struct GroupNormCtx {
    Tensor x;
    std::vector<float> mean, inv_std;  // per (n, group)
};
struct LinearCtx {
    Tensor x;
};
struct SiluCtx {
    Tensor x;
};
struct ResBlockCtx {
    GroupNormCtx gn1, gn2;
    SiluCtx act1, act2, act_t;
    ConvCtx conv1, conv2, skip;
    Tensor temb_in;
    LinearCtx temb;
};
struct AttentionCtx {
    GroupNormCtx gn;
    LinearCtx qkv, proj;
    Tensor q, k, v;      // [B, heads, T, dh]
    Tensor attn;         // softmax weights [B, heads, T, T]
    Tensor attn_out;     // pre-projection [B, T, C]
};

// Activation storage for one forward pass; one instance per concurrent
// evaluation stream.
struct UNetState {
    Tensor temb_sin, temb1, temb1s, temb;
    LinearCtx fc1, fc2;
    SiluCtx fc_act;
    ConvCtx conv_in;
    Tensor x_in;
    std::vector<Tensor> enc_out;
    std::vector<ResBlockCtx> enc_ctx;
    std::vector<ConvCtx> down_ctx;
    std::vector<Tensor> down_out;
    ResBlockCtx mid1_ctx, mid2_ctx;
    AttentionCtx attn_ctx;
    Tensor mid1_out, attn_out, mid2_out;
    std::vector<Tensor> cat_in;
    std::vector<ResBlockCtx> dec_ctx;
    std::vector<Tensor> dec_out;
    std::vector<Tensor> up_in;
    std::vector<ConvCtx> up_ctx;
    std::vector<Tensor> up_out;
    GroupNormCtx out_gn_ctx;
    SiluCtx out_act;
    ConvCtx out_conv_ctx;
    Tensor out_gn_t, out_act_t;
};

class UNet {
public:
    explicit UNet(const UNetConfig& cfg = {});
    ~UNet();
    UNet(const UNet&) = delete;
    UNet& operator=(const UNet&) = delete;

    const UNetConfig& config() const { return cfg_; }

    // He-style init from a seeded stream; final projections zero-initialized.
    void init_params(uint64_t seed);

    // x4: [B, d, d, 4] (condition channel first, then x_t), t: one timestep
    // per sample. eps: [B, d, d, 3]. Pure function of (x4, t, params).
    void forward(UNetState& s, const Tensor& x4, const std::vector<int>& t, Tensor& eps) const;

    // deps: gradient at the output. Accumulates parameter gradients unless
    // accum_param_grads is false; writes d/dx4 into dx4 when non-null.
    void backward(UNetState& s, const Tensor& deps, Tensor* dx4, bool accum_param_grads);

    void zero_grads();
    std::vector<Param*> params();
    std::vector<const Param*> params() const;
    int64_t param_count() const;

    UNetState* new_state() const;

private:
    UNetConfig cfg_;

    LinearP temb_fc1_, temb_fc2_;
    ConvP conv_in_;
    std::vector<ResBlockP> enc_;     // one per stage
    std::vector<ConvP> down_;        // stride-2, stages 0..2
    ResBlockP mid1_, mid2_;
    AttentionP attn_;
    std::vector<ResBlockP> dec_;     // stage 3..0 order
    std::vector<ConvP> up_;          // post-upsample convs, stage 3..1 order
    GroupNormP out_gn_;
    ConvP out_conv_;

    friend struct UNetState;
    void collect_params(std::vector<Param*>& out);
};

// ---- checkpoint I/O (bit-exact, versioned) ----

struct AdamState {
    int64_t step = 0;
    std::vector<std::vector<float>> m, v;  // per param, in declared order
};

struct CheckpointExtra {
    int T = 300;             // diffusion timestep count
    int epoch = 0;           // epochs completed
    bool has_adam = false;
    AdamState adam;
};

void save_checkpoint(const std::string& path, const UNet& model, const CheckpointExtra& extra);
// Throws IoError with the found/expected version on mismatch or corruption.
void load_checkpoint(const std::string& path, UNet& model, CheckpointExtra* extra);
UNetConfig peek_checkpoint_config(const std::string& path, int* T = nullptr);

}  // namespace sfs::model
