#include "gfm/model_io.hpp"

#include "gfm/panel.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace gfm {

namespace {

using nlohmann::json;

json matrix_to_json(const Matrix& m) {
  json data = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Matrix matrix_from_json(const json& j, const std::string& name) {
  if (!j.is_object() || !j.contains("rows") || !j.contains("cols") || !j.contains("data")) {
    throw FormatError("parameter '" + name + "' needs rows, cols and data");
  }
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const json& data = j.at("data");
  if (rows < 0 || cols < 0 || !data.is_array() || static_cast<Eigen::Index>(data.size()) != rows * cols) {
    throw FormatError("parameter '" + name + "' has inconsistent shape");
  }
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      const json& v = data[static_cast<std::size_t>(r * cols + c)];
      if (!v.is_number()) throw FormatError("parameter '" + name + "' contains a non-number");
      m(r, c) = v.get<double>();
    }
  }
  return m;
}

json params_to_json(const ParamSet& p) {
  json out = json::object();
  for (const auto& [name, m] : p) out[name] = matrix_to_json(m);
  return out;
}

ParamSet params_from_json(const json& j, const ParamSet& layout, const std::string& what) {
  if (!j.is_object()) throw FormatError(what + " must be an object");
  ParamSet out;
  for (const auto& [name, value] : j.items()) out.set(name, matrix_from_json(value, name));
  if (!out.same_layout(layout)) {
    std::string expected;
    for (const auto& [name, m] : layout) {
      expected += (expected.empty() ? "" : ", ") + name + " " + std::to_string(m.rows()) + "x" +
                  std::to_string(m.cols());
    }
    throw FormatError(what + " does not match the model layout; expected " + expected);
  }
  return out;
}

}  // namespace

std::string model_to_json(const FittedModel& model) {
  json j;
  j["format"] = kModelFormat;
  j["model"] = model.spec.label();
  j["family"] = family_name(model.spec.family);
  j["n_z"] = model.spec.n_z;
  j["n_x"] = model.spec.n_x;
  j["n_h"] = model.spec.n_h;
  j["symbols"] = model.symbols;
  j["theta"] = params_to_json(model.theta);
  j["phi"] = params_to_json(model.phi);
  return j.dump(1) + "\n";
}

FittedModel model_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("model file is not valid JSON: ") + e.what());
  }
  try {
    if (!j.is_object() || j.value("format", std::string()) != kModelFormat) {
      throw FormatError("model file lacks the format tag \"" + std::string(kModelFormat) + "\"");
    }
    FittedModel m;
    try {
      m.spec = ModelSpec::parse(j.at("model").get<std::string>(), j.at("n_x").get<int>());
    } catch (const ModelError& e) {
      throw FormatError(std::string("model file: ") + e.what());
    }
    if (j.at("n_z").get<int>() != m.spec.n_z || j.at("n_h").get<int>() != m.spec.n_h) {
      throw FormatError("model file: n_z / n_h disagree with the model label");
    }
    m.symbols = j.value("symbols", std::vector<std::string>{});
    if (!m.symbols.empty() && static_cast<int>(m.symbols.size()) != m.spec.n_x) {
      throw FormatError("model file: symbol count differs from n_x");
    }
    const FittedModel layout = init_model(m.spec, 0);
    m.theta = params_from_json(j.at("theta"), layout.theta, "theta");
    m.phi = params_from_json(j.at("phi"), layout.phi, "phi");
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string("model file: ") + e.what());
  }
}

void save_model(const std::filesystem::path& path, const FittedModel& model) {
  write_file_atomic(path, model_to_json(model));
}

FittedModel load_model(const std::filesystem::path& path) {
  try {
    return model_from_json(read_text_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

TrainingConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("config must be a JSON object");
  TrainingConfig c;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "epochs") {
        c.epochs = value.get<int>();
      } else if (key == "window") {
        c.window = value.get<int>();
      } else if (key == "learning_rate") {
        c.learning_rate = value.get<double>();
      } else if (key == "adam_beta1") {
        c.adam_beta1 = value.get<double>();
      } else if (key == "adam_beta2") {
        c.adam_beta2 = value.get<double>();
      } else if (key == "adam_eps") {
        c.adam_eps = value.get<double>();
      } else if (key == "mc_samples") {
        c.mc_samples = value.get<int>();
      } else if (key == "seed") {
        c.seed = value.get<std::uint64_t>();
      } else if (key == "grad_clip") {
        c.grad_clip = value.get<double>();
      } else {
        throw FormatError("unknown config key '" + key +
                          "' (known: epochs, window, learning_rate, adam_beta1, adam_beta2, "
                          "adam_eps, mc_samples, seed, grad_clip)");
      }
      if ((key == "epochs" || key == "window" || key == "mc_samples" || key == "seed") &&
          !value.is_number_integer()) {
        throw FormatError("config key '" + key + "' must be an integer");
      }
    } catch (const json::exception&) {
      throw FormatError("config key '" + key + "' has the wrong type");
    }
  }
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  return c;
}

std::string config_to_json(const TrainingConfig& c) {
  json j{{"epochs", c.epochs},         {"window", c.window},         {"learning_rate", c.learning_rate},
         {"adam_beta1", c.adam_beta1}, {"adam_beta2", c.adam_beta2}, {"adam_eps", c.adam_eps},
         {"mc_samples", c.mc_samples}, {"seed", c.seed},             {"grad_clip", c.grad_clip}};
  return j.dump(1) + "\n";
}

TrainingConfig load_config(const std::filesystem::path& path) {
  try {
    return config_from_json(read_text_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string curve_csv(const std::vector<double>& curve) {
  std::ostringstream os;
  os << "epoch,vlb\n";
  for (std::size_t i = 0; i < curve.size(); ++i) os << i + 1 << ',' << format_double(curve[i]) << '\n';
  return os.str();
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace gfm
