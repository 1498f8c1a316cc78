#include "splitnn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "splitnn/kernels.hpp"

namespace splitnn {

const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::Input: return "input";
    case OpKind::Param: return "param";
    case OpKind::Const: return "const";
    case OpKind::MatmulNT: return "matmul_nt";
    case OpKind::AddRow: return "add_row";
    case OpKind::Add: return "add";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Tanh: return "tanh";
    case OpKind::Relu: return "relu";
    case OpKind::Conv2dSame: return "conv2d_same";
    case OpKind::MaxPool2: return "maxpool2";
    case OpKind::Reshape: return "reshape";
    case OpKind::Concat: return "concat";
    case OpKind::SliceTime: return "slice_time";
    case OpKind::StackTime: return "stack_time";
    case OpKind::Softmax: return "softmax";
    case OpKind::SoftmaxXent: return "softmax_xent";
    case OpKind::Sum: return "sum";
    case OpKind::SquareSum: return "square_sum";
    case OpKind::Quantize: return "quantize";
  }
  return "?";
}

double GradCheckReport::worst() const {
  double w = 0.0;
  for (const auto& e : entries) w = std::max(w, e.max_rel_err);
  return w;
}

namespace {

std::string node_desc(int id, const Node& n) {
  std::string s = "node#" + std::to_string(id) + "(" + op_name(n.kind);
  if (!n.name.empty()) s += " '" + n.name + "'";
  return s + ")";
}

}  // namespace

int Graph::add_node(Node n) {
  int id = static_cast<int>(nodes_.size());
  if (!n.name.empty()) {
    if (leaf_index_.count(n.name))
      throw GraphError("duplicate leaf name '" + n.name + "'");
    leaf_index_[n.name] = id;
  }
  nodes_.push_back(std::move(n));
  output_ = id;  // default output is the last node; set_output overrides
  forward_done_ = false;
  return id;
}

int Graph::leaf_id(const std::string& name) const {
  auto it = leaf_index_.find(name);
  if (it == leaf_index_.end()) throw GraphError("no leaf named '" + name + "'");
  return it->second;
}

int Graph::input(const std::string& name, std::vector<int64_t> shape, bool requires_grad) {
  Node n;
  n.kind = OpKind::Input;
  n.name = name;
  n.out_shape = std::move(shape);
  n.requires_grad = requires_grad;
  Tensor::numel(n.out_shape);  // validates positivity
  return add_node(std::move(n));
}

int Graph::param(const std::string& name, std::vector<int64_t> shape) {
  Node n;
  n.kind = OpKind::Param;
  n.name = name;
  n.out_shape = std::move(shape);
  n.requires_grad = true;
  Tensor::numel(n.out_shape);
  param_names_.push_back(name);
  return add_node(std::move(n));
}

int Graph::constant(Tensor value) {
  Node n;
  n.kind = OpKind::Const;
  n.out_shape = value.shape;
  n.value = std::move(value);
  n.bound = true;
  return add_node(std::move(n));
}

void Graph::check_rank2(int id, const char* op) const {
  if (node(id).out_shape.size() != 2)
    throw GraphError(std::string(op) + ": expected rank-2 operand, got " + shape_str(node(id).out_shape) +
                     " from " + node_desc(id, node(id)));
}

int Graph::matmul_nt(int a, int b) {
  check_rank2(a, "matmul_nt");
  check_rank2(b, "matmul_nt");
  const auto& sa = node(a).out_shape;
  const auto& sb = node(b).out_shape;
  if (sa[1] != sb[1])
    throw GraphError("matmul_nt: inner dimensions differ, " + shape_str(sa) + " vs " + shape_str(sb) +
                     " at " + node_desc(b, node(b)));
  Node n;
  n.kind = OpKind::MatmulNT;
  n.args = {a, b};
  n.out_shape = {sa[0], sb[0]};
  return add_node(std::move(n));
}

int Graph::add_row(int a, int b) {
  check_rank2(a, "add_row");
  const auto& sa = node(a).out_shape;
  const auto& sb = node(b).out_shape;
  if (sb.size() != 1 || sb[0] != sa[1])
    throw GraphError("add_row: row shape " + shape_str(sb) + " does not match " + shape_str(sa));
  Node n;
  n.kind = OpKind::AddRow;
  n.args = {a, b};
  n.out_shape = sa;
  return add_node(std::move(n));
}

int Graph::add(int a, int b) {
  if (node(a).out_shape != node(b).out_shape)
    throw GraphError("add: shape mismatch " + shape_str(node(a).out_shape) + " vs " +
                     shape_str(node(b).out_shape) + " at " + node_desc(b, node(b)));
  Node n;
  n.kind = OpKind::Add;
  n.args = {a, b};
  n.out_shape = node(a).out_shape;
  return add_node(std::move(n));
}

int Graph::mul(int a, int b) {
  if (node(a).out_shape != node(b).out_shape)
    throw GraphError("mul: shape mismatch " + shape_str(node(a).out_shape) + " vs " +
                     shape_str(node(b).out_shape) + " at " + node_desc(b, node(b)));
  Node n;
  n.kind = OpKind::Mul;
  n.args = {a, b};
  n.out_shape = node(a).out_shape;
  return add_node(std::move(n));
}

int Graph::scale(int a, double alpha) {
  Node n;
  n.kind = OpKind::Scale;
  n.args = {a};
  n.alpha = alpha;
  n.out_shape = node(a).out_shape;
  return add_node(std::move(n));
}

int Graph::sigmoid(int a) {
  Node n;
  n.kind = OpKind::Sigmoid;
  n.args = {a};
  n.out_shape = node(a).out_shape;
  return add_node(std::move(n));
}

int Graph::tanh_(int a) {
  Node n;
  n.kind = OpKind::Tanh;
  n.args = {a};
  n.out_shape = node(a).out_shape;
  return add_node(std::move(n));
}

int Graph::relu(int a) {
  Node n;
  n.kind = OpKind::Relu;
  n.args = {a};
  n.out_shape = node(a).out_shape;
  return add_node(std::move(n));
}

int Graph::conv2d_same(int x, int w, int b) {
  const auto& sx = node(x).out_shape;
  const auto& sw = node(w).out_shape;
  const auto& sb = node(b).out_shape;
  if (sx.size() != 4)
    throw GraphError("conv2d_same: expected input (m,h,w,c), got " + shape_str(sx));
  if (sw.size() != 4 || sw[3] != sx[3])
    throw GraphError("conv2d_same: filter shape " + shape_str(sw) + " incompatible with input " + shape_str(sx));
  if (sw[1] % 2 == 0 || sw[2] % 2 == 0)
    throw GraphError("conv2d_same: kernel dimensions must be odd for same padding, got " + shape_str(sw));
  if (sb.size() != 1 || sb[0] != sw[0])
    throw GraphError("conv2d_same: bias shape " + shape_str(sb) + " does not match filter count");
  Node n;
  n.kind = OpKind::Conv2dSame;
  n.args = {x, w, b};
  n.out_shape = {sx[0], sx[1], sx[2], sw[0]};
  return add_node(std::move(n));
}

int Graph::maxpool2(int a) {
  const auto& s = node(a).out_shape;
  if (s.size() != 4) throw GraphError("maxpool2: expected (m,h,w,c), got " + shape_str(s));
  if (s[1] % 2 != 0 || s[2] % 2 != 0)
    throw GraphError("maxpool2: spatial dimensions must be even, got " + shape_str(s));
  Node n;
  n.kind = OpKind::MaxPool2;
  n.args = {a};
  n.out_shape = {s[0], s[1] / 2, s[2] / 2, s[3]};
  return add_node(std::move(n));
}

int Graph::reshape(int a, std::vector<int64_t> shape) {
  if (Tensor::numel(shape) != Tensor::numel(node(a).out_shape))
    throw GraphError("reshape: element count mismatch, " + shape_str(node(a).out_shape) + " -> " +
                     shape_str(shape));
  Node n;
  n.kind = OpKind::Reshape;
  n.args = {a};
  n.out_shape = std::move(shape);
  return add_node(std::move(n));
}

int Graph::concat(const std::vector<int>& parts) {
  if (parts.empty()) throw GraphError("concat: no operands");
  int64_t rows = node(parts[0]).out_shape[0];
  int64_t cols = 0;
  for (int p : parts) {
    check_rank2(p, "concat");
    if (node(p).out_shape[0] != rows)
      throw GraphError("concat: row count mismatch at " + node_desc(p, node(p)));
    cols += node(p).out_shape[1];
  }
  Node n;
  n.kind = OpKind::Concat;
  n.args = parts;
  n.out_shape = {rows, cols};
  return add_node(std::move(n));
}

int Graph::slice_time(int a, int t) {
  const auto& s = node(a).out_shape;
  if (s.size() != 3) throw GraphError("slice_time: expected (m,t,ch), got " + shape_str(s));
  if (t < 0 || t >= s[1]) throw GraphError("slice_time: step " + std::to_string(t) + " out of range");
  Node n;
  n.kind = OpKind::SliceTime;
  n.args = {a};
  n.time_step = t;
  n.out_shape = {s[0], s[2]};
  return add_node(std::move(n));
}

int Graph::stack_time(const std::vector<int>& steps) {
  if (steps.empty()) throw GraphError("stack_time: no operands");
  const auto& s0 = node(steps[0]).out_shape;
  for (int p : steps) {
    check_rank2(p, "stack_time");
    if (node(p).out_shape != s0)
      throw GraphError("stack_time: step shape mismatch at " + node_desc(p, node(p)));
  }
  Node n;
  n.kind = OpKind::StackTime;
  n.args = steps;
  n.out_shape = {s0[0], static_cast<int64_t>(steps.size()), s0[1]};
  return add_node(std::move(n));
}

int Graph::softmax(int a) {
  check_rank2(a, "softmax");
  Node n;
  n.kind = OpKind::Softmax;
  n.args = {a};
  n.out_shape = node(a).out_shape;
  return add_node(std::move(n));
}

int Graph::softmax_xent(int logits, int labels) {
  check_rank2(logits, "softmax_xent");
  const auto& sl = node(labels).out_shape;
  if (sl.size() != 1 || sl[0] != node(logits).out_shape[0])
    throw GraphError("softmax_xent: labels shape " + shape_str(sl) + " does not match logits " +
                     shape_str(node(logits).out_shape));
  Node n;
  n.kind = OpKind::SoftmaxXent;
  n.args = {logits, labels};
  n.out_shape = {1};
  return add_node(std::move(n));
}

int Graph::sum(int a) {
  Node n;
  n.kind = OpKind::Sum;
  n.args = {a};
  n.out_shape = {1};
  return add_node(std::move(n));
}

int Graph::square_sum(int a) {
  Node n;
  n.kind = OpKind::SquareSum;
  n.args = {a};
  n.out_shape = {1};
  return add_node(std::move(n));
}

int Graph::quantize(int a, const QuantizeAttrs& q) {
  if (q.spec.bits < 1 || q.spec.bits > 30) throw GraphError("quantize: bits must be in [1,30]");
  if (!(q.spec.hi > q.spec.lo)) throw GraphError("quantize: empty range");
  Node n;
  n.kind = OpKind::Quantize;
  n.args = {a};
  n.quant = q;
  n.out_shape = node(a).out_shape;
  return add_node(std::move(n));
}

void Graph::set_output(int id) {
  if (id < 0 || id >= node_count()) throw GraphError("set_output: bad node id");
  output_ = id;
}

void Graph::bind(const std::string& name, const Tensor& value) { bind(leaf_id(name), value); }

void Graph::bind(int id, const Tensor& value) {
  Node& n = mut(id);
  if (n.kind != OpKind::Input && n.kind != OpKind::Param)
    throw GraphError("bind: " + node_desc(id, n) + " is not a bindable leaf");
  if (value.shape != n.out_shape)
    throw GraphError("bind: shape " + shape_str(value.shape) + " does not match declared " +
                     shape_str(n.out_shape) + " for " + node_desc(id, n));
  n.value = value;
  n.bound = true;
  forward_done_ = false;
}

const Tensor& Graph::value(int id) const {
  if (!forward_done_) throw GraphError("value: forward() has not run");
  return node(id).value;
}

const Tensor& Graph::grad(int id) const {
  if (!backward_done_) throw GraphError("grad: backward() has not run");
  return node(id).grad;
}

const Tensor& Graph::grad(const std::string& leaf_name) const { return grad(leaf_id(leaf_name)); }

std::map<std::string, Tensor> Graph::grad_map() const {
  if (!backward_done_) throw GraphError("grad_map: backward() has not run");
  std::map<std::string, Tensor> out;
  for (const auto& [name, id] : leaf_index_)
    if (node(id).requires_grad) out[name] = node(id).grad;
  return out;
}

void Graph::eval(EvalMode mode) {
  for (size_t idx = 0; idx < nodes_.size(); ++idx) {
    Node& n = nodes_[idx];
    const int64_t count = Tensor::numel(n.out_shape);
    switch (n.kind) {
      case OpKind::Input:
      case OpKind::Param:
        if (!n.bound)
          throw GraphError("forward: unbound leaf " + node_desc(static_cast<int>(idx), n));
        continue;
      case OpKind::Const:
        continue;
      default:
        break;
    }
    if (n.value.shape != n.out_shape) n.value = Tensor(n.out_shape);
    Tensor& out = n.value;
    auto arg = [&](int i) -> const Tensor& { return nodes_[static_cast<size_t>(n.args[static_cast<size_t>(i)])].value; };
    switch (n.kind) {
      case OpKind::MatmulNT: {
        const Tensor& a = arg(0);
        const Tensor& b = arg(1);
        kern::matmul_nt(a.data.data(), b.data.data(), out.data.data(), a.shape[0], a.shape[1], b.shape[0]);
        break;
      }
      case OpKind::AddRow: {
        kern::vaddrow(arg(0).data.data(), arg(1).data.data(), out.data.data(), out.shape[0], out.shape[1]);
        break;
      }
      case OpKind::Add:
        kern::vadd(arg(0).data.data(), arg(1).data.data(), out.data.data(), count);
        break;
      case OpKind::Mul:
        kern::vmul(arg(0).data.data(), arg(1).data.data(), out.data.data(), count);
        break;
      case OpKind::Scale:
        kern::vscale(arg(0).data.data(), n.alpha, out.data.data(), count);
        break;
      case OpKind::Sigmoid:
        kern::vsigmoid(arg(0).data.data(), out.data.data(), count);
        break;
      case OpKind::Tanh:
        kern::vtanh(arg(0).data.data(), out.data.data(), count);
        break;
      case OpKind::Relu:
        kern::vrelu(arg(0).data.data(), out.data.data(), count);
        break;
      case OpKind::Conv2dSame: {
        const Tensor& x = arg(0);
        const Tensor& w = arg(1);
        const Tensor& b = arg(2);
        kern::conv2d_same(x.data.data(), w.data.data(), b.data.data(), out.data.data(), x.shape[0], x.shape[1],
                          x.shape[2], x.shape[3], w.shape[0], w.shape[1], w.shape[2]);
        break;
      }
      case OpKind::MaxPool2: {
        const Tensor& x = arg(0);
        n.iaux.resize(static_cast<size_t>(count));
        kern::maxpool2(x.data.data(), out.data.data(), n.iaux.data(), x.shape[0], x.shape[1], x.shape[2],
                       x.shape[3]);
        break;
      }
      case OpKind::Reshape:
        out.data = arg(0).data;
        break;
      case OpKind::Concat: {
        const int64_t rows = out.shape[0];
        int64_t off = 0;
        for (size_t a = 0; a < n.args.size(); ++a) {
          const Tensor& part = arg(static_cast<int>(a));
          const int64_t w = part.shape[1];
          for (int64_t r = 0; r < rows; ++r)
            std::memcpy(out.data.data() + r * out.shape[1] + off, part.data.data() + r * w,
                        sizeof(double) * static_cast<size_t>(w));
          off += w;
        }
        break;
      }
      case OpKind::SliceTime: {
        const Tensor& x = arg(0);
        const int64_t ch = x.shape[2];
        for (int64_t r = 0; r < x.shape[0]; ++r)
          std::memcpy(out.data.data() + r * ch, x.data.data() + (r * x.shape[1] + n.time_step) * ch,
                      sizeof(double) * static_cast<size_t>(ch));
        break;
      }
      case OpKind::StackTime: {
        const int64_t rows = out.shape[0], steps = out.shape[1], ch = out.shape[2];
        for (int64_t t = 0; t < steps; ++t) {
          const Tensor& xt = arg(static_cast<int>(t));
          for (int64_t r = 0; r < rows; ++r)
            std::memcpy(out.data.data() + (r * steps + t) * ch, xt.data.data() + r * ch,
                        sizeof(double) * static_cast<size_t>(ch));
        }
        break;
      }
      case OpKind::Softmax: {
        const Tensor& x = arg(0);
        const int64_t rows = x.shape[0], cols = x.shape[1];
        for (int64_t r = 0; r < rows; ++r) {
          const double* xr = x.data.data() + r * cols;
          double* yr = out.data.data() + r * cols;
          double mx = xr[0];
          for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
          double z = 0.0;
          for (int64_t j = 0; j < cols; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            z += yr[j];
          }
          for (int64_t j = 0; j < cols; ++j) yr[j] /= z;
        }
        break;
      }
      case OpKind::SoftmaxXent: {
        const Tensor& logits = arg(0);
        const Tensor& labels = arg(1);
        const int64_t rows = logits.shape[0], cols = logits.shape[1];
        if (n.aux.shape != logits.shape) n.aux = Tensor(logits.shape);
        double total = 0.0;
        for (int64_t r = 0; r < rows; ++r) {
          const double* xr = logits.data.data() + r * cols;
          double* pr = n.aux.data.data() + r * cols;
          const int64_t lab = static_cast<int64_t>(labels[r]);
          if (lab < 0 || lab >= cols || labels[r] != static_cast<double>(lab))
            throw GraphError("softmax_xent: label " + std::to_string(labels[r]) + " out of range [0," +
                             std::to_string(cols) + ") at row " + std::to_string(r));
          double mx = xr[0];
          for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
          double z = 0.0;
          for (int64_t j = 0; j < cols; ++j) {
            pr[j] = std::exp(xr[j] - mx);
            z += pr[j];
          }
          for (int64_t j = 0; j < cols; ++j) pr[j] /= z;
          total += std::log(z) + mx - xr[lab];
        }
        out[0] = total / static_cast<double>(rows);
        break;
      }
      case OpKind::Sum: {
        const Tensor& x = arg(0);
        double s = 0.0;
        for (double v : x.data) s += v;
        out[0] = s;
        break;
      }
      case OpKind::SquareSum: {
        const Tensor& x = arg(0);
        double s = 0.0;
        for (double v : x.data) s += v * v;
        out[0] = s;
        break;
      }
      case OpKind::Quantize: {
        const Tensor& x = arg(0);
        const QuantizerSpec& q = n.quant.spec;
        if (mode == EvalMode::SurrogateQuantizer) {
          for (int64_t i = 0; i < count; ++i) out[i] = std::clamp(x[i], q.lo, q.hi);
          n.iaux.clear();
        } else {
          n.iaux.resize(static_cast<size_t>(count));
          for (int64_t i = 0; i < count; ++i) {
            const int32_t lv = q.level_of(x[i]);
            n.iaux[static_cast<size_t>(i)] = lv;
            out[i] = q.value_of(lv);
          }
        }
        break;
      }
      default:
        throw GraphError("forward: unexpected op");
    }
  }
  forward_done_ = true;
  backward_done_ = false;
  last_mode_ = mode;
}

const Tensor& Graph::forward() {
  if (output_ < 0) throw GraphError("forward: empty graph");
  eval(EvalMode::Normal);
  return node(output_).value;
}

void Graph::backward() {
  if (output_ < 0) throw GraphError("backward: empty graph");
  if (Tensor::numel(node(output_).out_shape) != 1)
    throw GraphError("backward: output must be scalar, got " + shape_str(node(output_).out_shape));
  backward_from(output_, Tensor::scalar(1.0));
}

void Graph::backward_from(int id, const Tensor& seed) {
  if (!forward_done_) throw GraphError("backward: forward() has not run with the current bindings");
  if (seed.shape != node(id).out_shape)
    throw GraphError("backward: seed shape " + shape_str(seed.shape) + " does not match " +
                     shape_str(node(id).out_shape));
  for (size_t i = 0; i <= static_cast<size_t>(id); ++i) {
    Node& n = nodes_[i];
    if (n.kind == OpKind::Quantize && last_mode_ == EvalMode::Normal && !n.quant.straight_through)
      throw GraphError("backward: " + node_desc(static_cast<int>(i), n) +
                       " is a hard quantizer without a surrogate gradient; enable straight-through to train across it");
    if (n.grad.shape != n.out_shape)
      n.grad = Tensor(n.out_shape);
    else
      n.grad.fill(0.0);
  }
  Node& seed_node = mut(id);
  seed_node.grad = seed;

  for (int i = id; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.kind == OpKind::Input || n.kind == OpKind::Param || n.kind == OpKind::Const) continue;
    const Tensor& g = n.grad;
    auto argv = [&](int a) -> const Tensor& { return nodes_[static_cast<size_t>(n.args[static_cast<size_t>(a)])].value; };
    auto argg = [&](int a) -> Tensor& { return nodes_[static_cast<size_t>(n.args[static_cast<size_t>(a)])].grad; };
    const int64_t count = Tensor::numel(n.out_shape);
    switch (n.kind) {
      case OpKind::MatmulNT: {
        const Tensor& a = argv(0);
        const Tensor& b = argv(1);
        const int64_t m = a.shape[0], k = a.shape[1], nn = b.shape[0];
        Tensor da({m, k}), db({nn, k});
        kern::matmul_nn(g.data.data(), b.data.data(), da.data.data(), m, nn, k);
        kern::matmul_tn(g.data.data(), a.data.data(), db.data.data(), nn, m, k);
        for (int64_t t = 0; t < da.size(); ++t) argg(0)[t] += da[t];
        for (int64_t t = 0; t < db.size(); ++t) argg(1)[t] += db[t];
        break;
      }
      case OpKind::AddRow: {
        Tensor& dx = argg(0);
        Tensor& drow = argg(1);
        const int64_t rows = n.out_shape[0], cols = n.out_shape[1];
        for (int64_t t = 0; t < count; ++t) dx[t] += g[t];
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t c = 0; c < cols; ++c) drow[c] += g[r * cols + c];
        break;
      }
      case OpKind::Add:
        for (int64_t t = 0; t < count; ++t) argg(0)[t] += g[t];
        for (int64_t t = 0; t < count; ++t) argg(1)[t] += g[t];
        break;
      case OpKind::Mul: {
        const Tensor& a = argv(0);
        const Tensor& b = argv(1);
        for (int64_t t = 0; t < count; ++t) argg(0)[t] += g[t] * b[t];
        for (int64_t t = 0; t < count; ++t) argg(1)[t] += g[t] * a[t];
        break;
      }
      case OpKind::Scale:
        for (int64_t t = 0; t < count; ++t) argg(0)[t] += n.alpha * g[t];
        break;
      case OpKind::Sigmoid:
        for (int64_t t = 0; t < count; ++t) argg(0)[t] += g[t] * n.value[t] * (1.0 - n.value[t]);
        break;
      case OpKind::Tanh:
        for (int64_t t = 0; t < count; ++t) argg(0)[t] += g[t] * (1.0 - n.value[t] * n.value[t]);
        break;
      case OpKind::Relu: {
        const Tensor& x = argv(0);
        for (int64_t t = 0; t < count; ++t) argg(0)[t] += x[t] > 0.0 ? g[t] : 0.0;
        break;
      }
      case OpKind::Conv2dSame: {
        const Tensor& x = argv(0);
        const Tensor& w = argv(1);
        const int64_t m = x.shape[0], h = x.shape[1], wd = x.shape[2], cin = x.shape[3];
        const int64_t f = w.shape[0], kh = w.shape[1], kw = w.shape[2];
        Tensor dx(x.shape), dw(w.shape), db({f});
        kern::conv2d_same_dx(g.data.data(), w.data.data(), dx.data.data(), m, h, wd, cin, f, kh, kw);
        kern::conv2d_same_dw(g.data.data(), x.data.data(), dw.data.data(), db.data.data(), m, h, wd, cin, f, kh, kw);
        for (int64_t t = 0; t < dx.size(); ++t) argg(0)[t] += dx[t];
        for (int64_t t = 0; t < dw.size(); ++t) argg(1)[t] += dw[t];
        for (int64_t t = 0; t < db.size(); ++t) argg(2)[t] += db[t];
        break;
      }
      case OpKind::MaxPool2: {
        const Tensor& x = argv(0);
        Tensor dx(x.shape);
        kern::maxpool2_dx(g.data.data(), n.iaux.data(), dx.data.data(), x.shape[0], x.shape[1], x.shape[2],
                          x.shape[3]);
        for (int64_t t = 0; t < dx.size(); ++t) argg(0)[t] += dx[t];
        break;
      }
      case OpKind::Reshape:
        for (int64_t t = 0; t < count; ++t) argg(0)[t] += g[t];
        break;
      case OpKind::Concat: {
        const int64_t rows = n.out_shape[0];
        int64_t off = 0;
        for (size_t a = 0; a < n.args.size(); ++a) {
          Tensor& dp = argg(static_cast<int>(a));
          const int64_t w = dp.shape[1];
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t c = 0; c < w; ++c) dp[r * w + c] += g[r * n.out_shape[1] + off + c];
          off += w;
        }
        break;
      }
      case OpKind::SliceTime: {
        Tensor& dx = argg(0);
        const auto& xs = argv(0).shape;
        const int64_t ch = xs[2];
        for (int64_t r = 0; r < xs[0]; ++r)
          for (int64_t c = 0; c < ch; ++c) dx[(r * xs[1] + n.time_step) * ch + c] += g[r * ch + c];
        break;
      }
      case OpKind::StackTime: {
        const int64_t rows = n.out_shape[0], steps = n.out_shape[1], ch = n.out_shape[2];
        for (int64_t t = 0; t < steps; ++t) {
          Tensor& dxt = argg(static_cast<int>(t));
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t c = 0; c < ch; ++c) dxt[r * ch + c] += g[(r * steps + t) * ch + c];
        }
        break;
      }
      case OpKind::Softmax: {
        Tensor& dx = argg(0);
        const int64_t rows = n.out_shape[0], cols = n.out_shape[1];
        for (int64_t r = 0; r < rows; ++r) {
          const double* yr = n.value.data.data() + r * cols;
          const double* gr = g.data.data() + r * cols;
          double dotp = 0.0;
          for (int64_t j = 0; j < cols; ++j) dotp += gr[j] * yr[j];
          for (int64_t j = 0; j < cols; ++j) dx[r * cols + j] += yr[j] * (gr[j] - dotp);
        }
        break;
      }
      case OpKind::SoftmaxXent: {
        Tensor& dl = argg(0);
        const Tensor& labels = argv(1);
        const int64_t rows = n.aux.shape[0], cols = n.aux.shape[1];
        const double gs = g[0] / static_cast<double>(rows);
        for (int64_t r = 0; r < rows; ++r) {
          const int64_t lab = static_cast<int64_t>(labels[r]);
          for (int64_t j = 0; j < cols; ++j)
            dl[r * cols + j] += gs * (n.aux[r * cols + j] - (j == lab ? 1.0 : 0.0));
        }
        break;
      }
      case OpKind::Sum: {
        Tensor& dx = argg(0);
        for (int64_t t = 0; t < dx.size(); ++t) dx[t] += g[0];
        break;
      }
      case OpKind::SquareSum: {
        const Tensor& x = argv(0);
        Tensor& dx = argg(0);
        for (int64_t t = 0; t < dx.size(); ++t) dx[t] += 2.0 * x[t] * g[0];
        break;
      }
      case OpKind::Quantize: {
        const Tensor& x = argv(0);
        Tensor& dx = argg(0);
        for (int64_t t = 0; t < count; ++t)
          dx[t] += (x[t] >= n.quant.spec.lo && x[t] <= n.quant.spec.hi) ? g[t] : 0.0;
        break;
      }
      default:
        throw GraphError("backward: unexpected op");
    }
  }
  backward_done_ = true;
}

GradCheckReport Graph::grad_check(double step, double tolerance) {
  if (output_ < 0) throw GraphError("grad_check: empty graph");
  if (Tensor::numel(node(output_).out_shape) != 1)
    throw GraphError("grad_check: output must be scalar");
  for (size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.kind == OpKind::Quantize && !n.quant.straight_through)
      throw GraphError("grad_check: " + node_desc(static_cast<int>(i), n) +
                       " is a hard quantizer; gradients are undefined without a straight-through surrogate");
  }

  // analytic gradients on the surrogate-quantizer path
  eval(EvalMode::SurrogateQuantizer);
  backward_from(output_, Tensor::scalar(1.0));
  std::map<std::string, Tensor> analytic;
  for (const auto& [name, id] : leaf_index_)
    if (node(id).requires_grad) analytic[name] = node(id).grad;

  GradCheckReport report;
  report.step = step;
  report.tolerance = tolerance;
  report.pass = true;
  for (const auto& [name, id] : leaf_index_) {
    if (!node(id).requires_grad) continue;
    Node& leaf = mut(id);
    GradCheckEntry entry;
    entry.param = name;
    for (int64_t t = 0; t < leaf.value.size(); ++t) {
      const double saved = leaf.value[t];
      leaf.value[t] = saved + step;
      eval(EvalMode::SurrogateQuantizer);
      const double fp = node(output_).value[0];
      leaf.value[t] = saved - step;
      eval(EvalMode::SurrogateQuantizer);
      const double fm = node(output_).value[0];
      leaf.value[t] = saved;
      const double numeric = (fp - fm) / (2.0 * step);
      const double a = analytic[name][t];
      const double rel = std::abs(a - numeric) / std::max({1e-4, std::abs(a), std::abs(numeric)});
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
    }
    entry.pass = entry.max_rel_err < tolerance;
    if (!entry.pass) report.pass = false;
    report.entries.push_back(std::move(entry));
  }
  // leave caches consistent with the surrogate evaluation we used last
  eval(EvalMode::SurrogateQuantizer);
  return report;
}

}  // namespace splitnn
