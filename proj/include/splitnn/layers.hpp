#pragma once

#include <array>
#include <string>
#include <variant>
#include <vector>

#include "splitnn/graph.hpp"
#include "splitnn/quant.hpp"
#include "splitnn/tensor.hpp"

namespace splitnn {

enum class Activation { Sigmoid, Relu, Tanh, Identity };

const char* to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct FullyConnectedSpec {
  int64_t in_dim = 0;
  int64_t out_dim = 0;
  Activation act = Activation::Sigmoid;
  bool is_compression() const { return out_dim < in_dim; }  // fat weight matrix
};

// Same padding, stride 1, optional 2x2 max pool.
struct Conv2DSpec {
  int64_t in_h = 0, in_w = 0, in_ch = 1;
  int64_t filters = 0;
  int64_t kh = 5, kw = 5;
  Activation act = Activation::Relu;
  bool pool = true;
};

// Standard LSTM cell over a (window, input_dim) series; emits the final hidden state.
struct LstmSpec {
  int64_t input_dim = 0;
  int64_t state_dim = 0;
};

using LayerSpec = std::variant<FullyConnectedSpec, Conv2DSpec, LstmSpec>;

int64_t layer_input_dim(const LayerSpec&);
int64_t layer_output_dim(const LayerSpec&);
int64_t layer_param_count(const LayerSpec&);

// How a declared parameter tensor is initialized.
struct ParamInit {
  enum class Kind { UniformFanIn, Zero, One } kind = Kind::Zero;
  int64_t fan_in = 0;
};

struct ParamDecl {
  std::string name;
  std::vector<int64_t> shape;
  ParamInit init;
};

std::vector<ParamDecl> layer_param_decls(const LayerSpec&, const std::string& prefix);

// Graph builders: append the layer's ops to g, reading parameters from leaves
// named decl-wise under `prefix`. Return the output node id.
int append_activation(Graph& g, int x, Activation act);
int append_fc(Graph& g, int x, const FullyConnectedSpec& spec, const std::string& prefix);
int append_conv(Graph& g, int x, const Conv2DSpec& spec, const std::string& prefix);
// return_sequence stacks every step's hidden state into (m,window,state_dim);
// otherwise the final hidden state (m,state_dim) is returned.
int append_lstm(Graph& g, int series, const LstmSpec& spec, const std::string& prefix,
                bool return_sequence = false);
int append_layer(Graph& g, int x, const LayerSpec& spec, const std::string& prefix,
                 bool lstm_return_sequence = false);

// One-shot layer evaluation with explicit parameters (used by tests and the
// layer-level API; same code path as the full model graphs).
Tensor fc_forward(const FullyConnectedSpec& spec, const Tensor& W, const Tensor& b, const Tensor& x);
Tensor conv_pool_forward(const Conv2DSpec& spec, const Tensor& W, const Tensor& b, const Tensor& image);

// Gate order for LSTM parameter arrays: input, forget, cell candidate, output.
struct LstmParams {
  std::array<Tensor, 4> wx;  // (state_dim, input_dim) each
  std::array<Tensor, 4> wh;  // (state_dim, state_dim) each
  std::array<Tensor, 4> b;   // (state_dim) each
};
Tensor lstm_forward(const LstmSpec& spec, const LstmParams& p, const Tensor& series);

struct QuantizeResult {
  std::vector<int32_t> levels;
  Tensor dequantized;
};
QuantizeResult quantize(const QuantizerSpec& spec, const Tensor& x);
Tensor dequantize(const QuantizerSpec& spec, const std::vector<int32_t>& levels, std::vector<int64_t> shape);

}  // namespace splitnn
