#include "wrath/tasks.hpp"

#include <Eigen/Cholesky>
#include <sstream>

#include "wrath/la.hpp"

namespace wrath::vcluster {

const json& WorkerEnv::dep_value(const std::string& task_id) const {
  if (!values_) throw TaskError("KeyError: no value table attached");
  auto it = values_->find(task_id);
  if (it == values_->end())
    throw TaskError("KeyError: no value for dependency '" + task_id + "'");
  return it->second;
}

std::vector<json> WorkerEnv::dep_values() const {
  std::vector<json> out;
  for (const auto& d : spec_.deps) out.push_back(dep_value(d));
  return out;
}

void WorkerEnv::open_files(int n) {
  requested_ = std::max(requested_, opened_ + n);
  for (int i = 0; i < n; ++i) {
    if (node_open_files_ && *node_open_files_ >= node_file_limit_)
      throw TaskError("OSError: [Errno 24] Too many open files");
    if (node_open_files_) ++*node_open_files_;
    ++opened_;
  }
}

json WorkerEnv::call(const std::string& fn, const json& args) {
  return TaskRegistry::builtin().get(fn)(args, *this);
}

void TaskRegistry::add(const std::string& name, TaskFn fn) { fns_[name] = std::move(fn); }

const TaskFn& TaskRegistry::get(const std::string& name) const {
  auto it = fns_.find(name);
  if (it == fns_.end()) throw ConfigError("unregistered task function: " + name);
  return it->second;
}

TaskRegistry& TaskRegistry::builtin() {
  static TaskRegistry reg = [] {
    TaskRegistry r;
    register_builtin_tasks(r);
    return r;
  }();
  return reg;
}

namespace {

json count_words(const std::string& text, json counts) {
  std::istringstream in(text);
  std::string word;
  while (in >> word) {
    auto it = counts.find(word);
    counts[word] = (it == counts.end() ? 0 : it->get<long long>()) + 1;
  }
  return counts;
}

}  // namespace

void register_builtin_tasks(TaskRegistry& reg) {
  using bench::matrix_from_json;
  using bench::matrix_to_json;
  using bench::Matrix;

  reg.add("synth.noop", [](const json&, WorkerEnv&) { return json{{"ok", true}}; });
  reg.add("synth.echo", [](const json& args, WorkerEnv&) { return args; });

  // --- MapReduce word count ---
  reg.add("wordcount.map", [](const json& args, WorkerEnv&) {
    json counts = json::object();
    for (const auto& t : args.value("texts", json::array()))
      counts = count_words(t.get<std::string>(), std::move(counts));
    return counts;
  });
  reg.add("wordcount.reduce", [](const json&, WorkerEnv& env) {
    json total = json::object();
    for (const auto& part : env.dep_values())
      for (auto it = part.begin(); it != part.end(); ++it) {
        auto cur = total.find(it.key());
        total[it.key()] =
            (cur == total.end() ? 0 : cur->get<long long>()) + it.value().get<long long>();
      }
    return total;
  });

  // --- Blocked Cholesky (full storage, right-looking) ---
  // Block inputs come either inline ("c") or from a named dependency
  // ("a_from"/"b_from"/"c_from").
  auto block_in = [](const json& args, WorkerEnv& env, const std::string& role) -> Matrix {
    if (args.contains(role + "_from"))
      return matrix_from_json(env.dep_value(args[role + "_from"].get<std::string>()));
    return matrix_from_json(args.at(role));
  };
  reg.add("cholesky.potrf", [block_in](const json& args, WorkerEnv& env) {
    Matrix a = block_in(args, env, "c");
    Eigen::LLT<Matrix> llt(a);
    if (llt.info() != Eigen::Success)
      throw TaskError("LinAlgError: matrix block is not positive definite");
    return matrix_to_json(Matrix(llt.matrixL()));
  });
  reg.add("cholesky.trsm", [block_in](const json& args, WorkerEnv& env) {
    Matrix a = block_in(args, env, "c");   // panel block to solve
    Matrix l = block_in(args, env, "a");   // factorized diagonal block
    // A[i][k] = A[i][k] * L[k][k]^{-T}
    Matrix x = l.triangularView<Eigen::Lower>().transpose().solve<Eigen::OnTheRight>(a);
    return matrix_to_json(x);
  });
  reg.add("cholesky.mirror", [block_in](const json& args, WorkerEnv& env) {
    Matrix a = block_in(args, env, "a");
    return matrix_to_json(Matrix(a.transpose()));
  });
  reg.add("cholesky.gemm", [block_in](const json& args, WorkerEnv& env) {
    Matrix c = block_in(args, env, "c");
    Matrix a = block_in(args, env, "a");   // L[i][k]
    Matrix bt = block_in(args, env, "b");  // L[j][k]^T (mirror output)
    Matrix out = c - a * bt;
    return matrix_to_json(out);
  });

  // --- Injection bodies (Table-driven failure tasks) ---
  reg.add("inject.zero_division", [](const json&, WorkerEnv&) -> json {
    throw TaskError("ZeroDivisionError: division by zero");
  });
  reg.add("inject.runtime_error", [](const json&, WorkerEnv&) -> json {
    throw TaskError("RuntimeError: injected task failure");
  });
  reg.add("inject.kill_worker", [](const json&, WorkerEnv& env) -> json {
    env.kill_worker();
  });
  reg.add("inject.open_files", [](const json& args, WorkerEnv& env) {
    env.open_files(args.value("count", 1'000'000));
    if (args.contains("inner_fn"))
      return env.call(args["inner_fn"].get<std::string>(), args.value("inner_args", json::object()));
    return json{{"opened", env.opened_files()}};
  });
  reg.add("inject.import_wrapper", [](const json& args, WorkerEnv& env) {
    env.require_import(args.at("package").get<std::string>());
    if (args.contains("inner_fn"))
      return env.call(args["inner_fn"].get<std::string>(), args.value("inner_args", json::object()));
    return json{{"imported", args["package"]}};
  });
}

}  // namespace wrath::vcluster
