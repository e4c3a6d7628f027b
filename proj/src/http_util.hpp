#pragma once

#include <memory>
#include <string>

#include <httplib.h>

#include "eve/error.hpp"

namespace eve::detail {

struct HttpTarget {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path prefix without trailing slash
};

inline HttpTarget split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw config_error("URL '" + url + "' lacks a scheme", "http");
  const auto slash = url.find('/', scheme + 3);
  HttpTarget t{url.substr(0, slash), slash == std::string::npos ? "" : url.substr(slash)};
  while (!t.prefix.empty() && t.prefix.back() == '/') t.prefix.pop_back();
  return t;
}

inline std::unique_ptr<httplib::Client> make_client(const HttpTarget& t, const std::string& token, int timeout_s) {
  auto cli = std::make_unique<httplib::Client>(t.origin);
  cli->set_connection_timeout(timeout_s, 0);
  cli->set_read_timeout(timeout_s, 0);
  cli->set_write_timeout(timeout_s, 0);
  if (!token.empty()) cli->set_bearer_token_auth(token);
  return cli;
}

inline const httplib::Response& require_ok(const httplib::Result& res, const std::string& what) {
  if (!res) throw backend_error(what + ": request failed (" + httplib::to_string(res.error()) + ")", "http");
  if (res->status != 200) throw backend_error(what + ": HTTP status " + std::to_string(res->status), "http");
  return *res;
}

}  // namespace eve::detail
