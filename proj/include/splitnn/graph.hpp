#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "splitnn/quant.hpp"
#include "splitnn/tensor.hpp"

namespace splitnn {

struct GraphError : std::runtime_error {
  explicit GraphError(const std::string& what) : std::runtime_error(what) {}
};

enum class OpKind : uint8_t {
  Input,
  Param,
  Const,
  MatmulNT,  // a (m,k) . b (n,k)^T -> (m,n)
  AddRow,    // (m,n) + (n)
  Add,
  Mul,
  Scale,
  Sigmoid,
  Tanh,
  Relu,
  Conv2dSame,  // x (m,h,w,cin), w (f,kh,kw,cin), b (f) -> (m,h,w,f)
  MaxPool2,    // (m,h,w,c) -> (m,h/2,w/2,c)
  Reshape,
  Concat,     // rank-2 along last axis
  SliceTime,  // (m,t,ch) -> (m,ch) at fixed step
  StackTime,  // T x (m,ch) -> (m,T,ch)
  Softmax,    // rowwise
  SoftmaxXent,  // logits (m,K), labels (m) -> scalar mean cross-entropy
  Sum,
  SquareSum,
  Quantize,
};

const char* op_name(OpKind k);

struct QuantizeAttrs {
  QuantizerSpec spec;
  bool straight_through = false;
};

struct Node {
  OpKind kind;
  std::vector<int> args;
  std::vector<int64_t> out_shape;
  std::string name;  // leaves
  bool requires_grad = false;
  double alpha = 1.0;    // Scale
  int time_step = -1;    // SliceTime
  QuantizeAttrs quant;   // Quantize
  // runtime state
  Tensor value;
  Tensor grad;
  std::vector<int32_t> iaux;  // pool argmax / quantizer levels
  Tensor aux;                 // softmax probabilities cache
  bool bound = false;         // leaves: value supplied
};

struct GradCheckEntry {
  std::string param;
  double max_rel_err = 0.0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double step = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  double worst() const;
};

// Reverse-mode autodiff over a static computation graph. Nodes are appended in
// construction order, which is also the (topological) evaluation order.
class Graph {
 public:
  // leaves
  int input(const std::string& name, std::vector<int64_t> shape, bool requires_grad = false);
  int param(const std::string& name, std::vector<int64_t> shape);
  int constant(Tensor value);

  // ops
  int matmul_nt(int a, int b);
  int add_row(int a, int b);
  int add(int a, int b);
  int mul(int a, int b);
  int scale(int a, double alpha);
  int sigmoid(int a);
  int tanh_(int a);
  int relu(int a);
  int conv2d_same(int x, int w, int b);
  int maxpool2(int a);
  int reshape(int a, std::vector<int64_t> shape);
  int concat(const std::vector<int>& parts);
  int slice_time(int a, int t);
  int stack_time(const std::vector<int>& steps);
  int softmax(int a);
  int softmax_xent(int logits, int labels);
  int sum(int a);
  int square_sum(int a);
  int quantize(int a, const QuantizeAttrs& q);

  void set_output(int id);
  int output() const { return output_; }

  // binding and execution
  void bind(const std::string& name, const Tensor& value);
  void bind(int id, const Tensor& value);
  const Tensor& forward();
  // Gradients of the scalar output w.r.t. every requires_grad leaf.
  void backward();
  // Seed an arbitrary node's adjoint and propagate back from there (the
  // aggregator sends exactly such a seed to each node during distributed
  // training). forward() must have run with the current bindings.
  void backward_from(int id, const Tensor& seed);

  const Tensor& value(int id) const;
  const Tensor& grad(int id) const;
  const Tensor& grad(const std::string& leaf_name) const;
  std::map<std::string, Tensor> grad_map() const;

  GradCheckReport grad_check(double step, double tolerance);

  int node_count() const { return static_cast<int>(nodes_.size()); }
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
  int leaf(const std::string& name) const { return leaf_id(name); }
  const std::vector<std::string>& param_names() const { return param_names_; }
  bool evaluated() const { return forward_done_; }

 private:
  enum class EvalMode { Normal, SurrogateQuantizer };

  int add_node(Node n);
  int leaf_id(const std::string& name) const;
  void eval(EvalMode mode);
  void check_rank2(int id, const char* op) const;
  Node& mut(int id) { return nodes_[static_cast<size_t>(id)]; }

  std::vector<Node> nodes_;
  std::map<std::string, int> leaf_index_;
  std::vector<std::string> param_names_;
  int output_ = -1;
  bool forward_done_ = false;
  bool backward_done_ = false;
  EvalMode last_mode_ = EvalMode::Normal;
};

}  // namespace splitnn
