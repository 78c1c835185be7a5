#pragma once

#include <functional>
#include <string>

#include "seqforge/config/config_node.hpp"

namespace seqforge {

/// Supplies the hparams defaults of a typed block `{type, hparams}` whose
/// user type differs from the schema's default type.
/// Arguments: dotted path of the block, schema default type, user type.
using TypeResolver =
    std::function<ConfigNode(const std::string& path, const std::string& default_type,
                             const std::string& type)>;

namespace config_detail {

inline std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

inline bool is_typed_block(const ConfigNode& n) {
  return n.is_map() && n.size() == 2 && n.entries()[0].first == "type" &&
         n.entries()[0].second.is_string() && n.entries()[1].first == "hparams" &&
         n.entries()[1].second.is_map();
}

inline ConfigNode merge_value(const ConfigNode& user, const ConfigNode& schema,
                              const TypeResolver& resolver, const std::string& path);

inline ConfigNode merge_map(const ConfigNode& user, const ConfigNode& schema,
                            const TypeResolver& resolver, const std::string& path) {
  for (const auto& [key, value] : user.entries())
    if (!schema.contains(key)) throw ConfigError("unknown key '" + join(path, key) + "'");

  if (is_typed_block(schema)) {
    const auto& default_type = schema.at("type").as_string();
    std::string type = default_type;
    if (const auto* t = user.find("type")) {
      if (!t->is_string())
        throw ConfigError("type mismatch at '" + join(path, "type") + "': expected string, got " +
                          t->kind_name());
      type = t->as_string();
    }
    ConfigNode hparams_schema = schema.at("hparams");
    if (type != default_type && resolver) hparams_schema = resolver(path, default_type, type);
    const ConfigNode* user_hp = user.find("hparams");
    const ConfigNode empty = ConfigNode::map();
    ConfigNode out = ConfigNode::map();
    out.set("type", type);
    out.set("hparams", merge_value(user_hp ? *user_hp : empty, hparams_schema, resolver,
                                   join(path, "hparams")));
    return out;
  }

  ConfigNode out = ConfigNode::map();
  for (const auto& [key, def] : schema.entries()) {
    const auto* u = user.find(key);
    if (u) out.set(key, merge_value(*u, def, resolver, join(path, key)));
    else if (def.is_map()) out.set(key, merge_value(ConfigNode::map(), def, resolver, join(path, key)));
    else out.set(key, def);
  }
  return out;
}

inline ConfigNode coerce(const ConfigNode& user, const ConfigNode& schema, const std::string& path) {
  if (schema.is_float() && user.is_int()) return ConfigNode(user.as_float());
  if (user.kind() != schema.kind())
    throw ConfigError("type mismatch at '" + path + "': expected " + schema.kind_name() + ", got " +
                      user.kind_name());
  return user;
}

inline ConfigNode merge_value(const ConfigNode& user, const ConfigNode& schema,
                              const TypeResolver& resolver, const std::string& path) {
  if (schema.is_map()) {
    if (!user.is_map())
      throw ConfigError("type mismatch at '" + path + "': expected map, got " + user.kind_name());
    return merge_map(user, schema, resolver, path);
  }
  if (schema.is_list()) {
    if (!user.is_list())
      throw ConfigError("type mismatch at '" + path + "': expected list, got " + user.kind_name());
    if (schema.size() == 0) return user;
    ConfigNode out = ConfigNode::list();
    for (std::size_t i = 0; i < user.size(); ++i)
      out.push_back(coerce(user.items()[i], schema.items()[0], path + "[" + std::to_string(i) + "]"));
    return out;
  }
  return coerce(user, schema, path);
}

}  // namespace config_detail

/// Recursive merge of `user` over the defaults in `schema`. The result has
/// exactly the schema's key set (with typed blocks resolved through
/// `resolver`). Unknown keys and kind mismatches raise ConfigError naming the
/// dotted path. Ints are accepted where floats are expected.
inline ConfigNode merge_defaults(const ConfigNode& user, const ConfigNode& schema,
                                 const TypeResolver& resolver = {}, const std::string& path = "") {
  if (!user.is_map()) throw ConfigError("config root must be a map");
  return config_detail::merge_value(user, schema, resolver, path);
}

}  // namespace seqforge
