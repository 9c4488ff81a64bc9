#include "deepkkl/model_io.hpp"

#include <cmath>
#include <map>
#include <set>

#include "json.hpp"

#include "deepkkl/errors.hpp"
#include "deepkkl/text_io.hpp"

namespace dkkl {

using nlohmann::json;

namespace {

json view_to_json(const ParamView& v, const double* data) {
  json values = json::array();
  for (Eigen::Index r = 0; r < v.rows; ++r) {
    for (Eigen::Index c = 0; c < v.cols; ++c) values.push_back(data[c * v.rows + r]);
  }
  return json{{"shape", {v.rows, v.cols}}, {"data", std::move(values)}};
}

void json_to_view(const json& j, const ParamView& v, double* data) {
  if (!j.is_object() || !j.contains("shape") || !j.contains("data")) {
    throw SchemaError("array '" + v.name + "' needs shape and data");
  }
  const auto& shape = j.at("shape");
  if (!shape.is_array() || shape.size() != 2 || shape[0] != v.rows || shape[1] != v.cols) {
    throw SchemaError("array '" + v.name + "' has shape " + shape.dump() + ", expected [" +
                      std::to_string(v.rows) + "," + std::to_string(v.cols) + "]");
  }
  const auto& values = j.at("data");
  if (!values.is_array() || static_cast<Eigen::Index>(values.size()) != v.size) {
    throw SchemaError("array '" + v.name + "' has the wrong number of entries");
  }
  for (Eigen::Index r = 0; r < v.rows; ++r) {
    for (Eigen::Index c = 0; c < v.cols; ++c) {
      const auto& x = values[static_cast<std::size_t>(r * v.cols + c)];
      if (!x.is_number()) throw SchemaError("array '" + v.name + "' holds a non-numeric entry");
      const double d = x.get<double>();
      if (!std::isfinite(d)) throw SchemaError("array '" + v.name + "' holds a non-finite entry");
      data[c * v.rows + r] = d;
    }
  }
}

MlpParams mlp_shaped(int input_dim, const std::vector<int>& hidden) {
  MlpParams p;
  int fan_in = input_dim;
  auto push = [&](int out) {
    if (out <= 0) throw SchemaError("layer widths must be positive");
    p.layers.push_back(DenseLayer{Mat::Zero(out, fan_in), Vec::Zero(out)});
    fan_in = out;
  };
  for (int h : hidden) push(h);
  push(1);
  return p;
}

template <typename T>
T field(const json& j, const char* key) {
  if (!j.contains(key)) throw SchemaError(std::string("model file lacks '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw SchemaError(std::string("model file field '") + key + "' has the wrong type");
  }
}

json arrays_json(const ParamViews& views, const std::vector<const double*>& data) {
  json out = json::object();
  for (std::size_t i = 0; i < views.size(); ++i) out[views[i].name] = view_to_json(views[i], data[i]);
  return out;
}

void read_arrays(const json& j, const ParamViews& views, const std::vector<double*>& data, const char* what) {
  if (!j.is_object()) throw SchemaError(std::string(what) + " must be an object of named arrays");
  std::set<std::string> expected;
  for (std::size_t i = 0; i < views.size(); ++i) {
    expected.insert(views[i].name);
    if (!j.contains(views[i].name)) throw SchemaError(std::string(what) + " lacks array '" + views[i].name + "'");
    json_to_view(j.at(views[i].name), views[i], data[i]);
  }
  for (const auto& [name, _] : j.items()) {
    if (!expected.count(name)) throw SchemaError(std::string(what) + " has unexpected array '" + name + "'");
  }
}

}  // namespace

std::string model_to_json(const ModelFile& file) {
  Model model = file.model;
  const ModelKind kind = model_kind(model);
  const int m = latent_dim(model);
  const Scaler& scaler = model_scaler(model);

  json arch = json::object();
  if (const auto* k = std::get_if<KklModel>(&model)) {
    arch["complex_blocks"] = k->complex_blocks();
    arch["real_blocks"] = k->real_blocks();
    arch["hidden"] = k->head.hidden_widths();
  } else {
    arch["hidden"] = std::get<RecurrentModel>(model).head.hidden_widths();
  }

  ParamViews views = param_views(model);
  std::vector<const double*> data;
  for (const auto& v : views) data.push_back(v.data);

  json doc;
  doc["format_version"] = kModelFormatVersion;
  doc["kind"] = std::string(model_kind_name(kind));
  doc["system"] = file.system;
  doc["dt"] = model_dt(model);
  doc["latent_dim"] = m;
  doc["scaler"] = {{"y_min", scaler.y_min}, {"y_max", scaler.y_max}};
  doc["architecture"] = arch;
  doc["params"] = arrays_json(views, data);

  if (file.optimizer) {
    const AdamState& st = *file.optimizer;
    json opt;
    opt["step"] = st.step;
    opt["lr"] = st.config.lr;
    opt["beta1"] = st.config.beta1;
    opt["beta2"] = st.config.beta2;
    opt["eps"] = st.config.eps;
    if (st.step > 0) {
      if (st.first.size() != views.size() || st.second.size() != views.size()) {
        throw std::invalid_argument("optimizer state does not match the model's parameter blocks");
      }
      std::vector<const double*> first, second;
      for (std::size_t i = 0; i < views.size(); ++i) {
        if (st.first[i].size() != views[i].size || st.second[i].size() != views[i].size) {
          throw std::invalid_argument("optimizer moment for '" + views[i].name + "' has the wrong size");
        }
        first.push_back(st.first[i].data());
        second.push_back(st.second[i].data());
      }
      opt["first_moment"] = arrays_json(views, first);
      opt["second_moment"] = arrays_json(views, second);
    }
    doc["optimizer"] = std::move(opt);
  }
  return doc.dump(1) + "\n";
}

ModelFile model_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError(std::string("model file is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw SchemaError("model file must be a JSON object");
  const int version = field<int>(doc, "format_version");
  if (version != kModelFormatVersion) {
    throw SchemaError("unsupported model format version " + std::to_string(version));
  }
  const auto kind_name = field<std::string>(doc, "kind");
  const auto kind = parse_model_kind(kind_name);
  if (!kind) throw SchemaError("unknown model kind '" + kind_name + "'");
  const double dt = field<double>(doc, "dt");
  const int m = field<int>(doc, "latent_dim");
  if (m < 1) throw SchemaError("latent dimension must be positive");
  if (!doc.contains("scaler") || !doc.contains("architecture")) throw SchemaError("model file lacks scaler or architecture");
  const Scaler scaler{field<double>(doc.at("scaler"), "y_min"), field<double>(doc.at("scaler"), "y_max")};
  if (!(scaler.y_max > scaler.y_min)) throw SchemaError("scaler range is empty");
  const json& arch = doc.at("architecture");
  const auto hidden = field<std::vector<int>>(arch, "hidden");

  ModelFile file;
  file.system = doc.contains("system") ? field<std::string>(doc, "system") : std::string();
  if (*kind == ModelKind::kkl) {
    const int nc = field<int>(arch, "complex_blocks");
    const int nr = field<int>(arch, "real_blocks");
    if (nc < 0 || nr < 0 || 2 * nc + nr != m) throw SchemaError("block counts do not add up to the latent dimension");
    KklModel k;
    k.log_decay = Vec::Zero(nc + nr);
    k.frequency = Vec::Zero(nc);
    k.head = mlp_shaped(m, hidden);
    k.scaler = scaler;
    k.dt = dt;
    file.model = std::move(k);
  } else {
    RecurrentModel r;
    r.kind = *kind;
    if (*kind == ModelKind::gru) {
      r.gru = GruParams::zeros(m);
    } else {
      r.rnn = RnnParams::zeros(m);
    }
    r.head = mlp_shaped(m, hidden);
    r.scaler = scaler;
    r.dt = dt;
    file.model = std::move(r);
  }

  ParamViews views = param_views(file.model);
  std::vector<double*> data;
  for (const auto& v : views) data.push_back(v.data);
  if (!doc.contains("params")) throw SchemaError("model file lacks params");
  read_arrays(doc.at("params"), views, data, "params");
  try {
    std::visit([](const auto& model) { model.validate(); }, file.model);
  } catch (const std::invalid_argument& e) {
    throw SchemaError(std::string("inconsistent model: ") + e.what());
  }

  if (doc.contains("optimizer")) {
    const json& opt = doc.at("optimizer");
    AdamState st;
    st.step = field<long>(opt, "step");
    st.config.lr = field<double>(opt, "lr");
    st.config.beta1 = field<double>(opt, "beta1");
    st.config.beta2 = field<double>(opt, "beta2");
    st.config.eps = field<double>(opt, "eps");
    if (st.step > 0) {
      std::vector<double*> first, second;
      for (const auto& v : views) {
        st.first.push_back(Vec::Zero(v.size));
        st.second.push_back(Vec::Zero(v.size));
      }
      for (std::size_t i = 0; i < views.size(); ++i) {
        first.push_back(st.first[i].data());
        second.push_back(st.second[i].data());
      }
      if (!opt.contains("first_moment") || !opt.contains("second_moment")) {
        throw SchemaError("optimizer state lacks its moments");
      }
      read_arrays(opt.at("first_moment"), views, first, "first_moment");
      read_arrays(opt.at("second_moment"), views, second, "second_moment");
    }
    file.optimizer = std::move(st);
  }
  return file;
}

void save_model(const std::filesystem::path& path, const ModelFile& file) {
  write_text_file(path, model_to_json(file));
}

ModelFile load_model(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  try {
    return model_from_json(text);
  } catch (const SchemaError& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

}  // namespace dkkl
