#include "epn/group_json.hpp"

namespace epn {

nlohmann::json to_json(const FiniteRotationGroup& group) {
  const std::size_t n = group.order();
  nlohmann::json elements = nlohmann::json::array();
  nlohmann::json mul = nlohmann::json::array();
  nlohmann::json inv = nlohmann::json::array();
  for (std::size_t i = 0; i < n; ++i) {
    const Mat3& m = group.element(i);
    nlohmann::json row = nlohmann::json::array();
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) row.push_back(m(r, c));
    }
    elements.push_back(std::move(row));
    nlohmann::json mrow = nlohmann::json::array();
    for (std::size_t j = 0; j < n; ++j) mrow.push_back(group.mul(i, j));
    mul.push_back(std::move(mrow));
    inv.push_back(group.inv(i));
  }
  return {{"kind", to_string(group.kind())}, {"order", n}, {"elements", elements}, {"mul", mul}, {"inv", inv}};
}

FiniteRotationGroup group_from_json(const nlohmann::json& j) {
  try {
    const GroupKind kind = parse_group_kind(j.at("kind").get<std::string>());
    std::vector<Mat3> elements;
    for (const auto& e : j.at("elements")) {
      if (e.size() != 9) throw Error("group JSON: each element needs 9 entries");
      Mat3 m;
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) m(r, c) = e.at(static_cast<std::size_t>(3 * r + c)).get<double>();
      }
      elements.push_back(m);
    }
    FiniteRotationGroup group(kind, std::move(elements));
    if (j.at("order").get<std::size_t>() != group.order()) throw Error("group JSON: order mismatch");
    if (j.contains("mul") || j.contains("inv")) {
      const nlohmann::json rebuilt = to_json(group);
      if (j.at("mul") != rebuilt.at("mul") || j.at("inv") != rebuilt.at("inv")) {
        throw Error("group JSON: stored tables disagree with the elements");
      }
    }
    return group;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("group JSON: ") + e.what());
  }
}

}  // namespace epn
