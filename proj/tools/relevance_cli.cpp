#include "relevance/service.hpp"

int main(int argc, char** argv) { return relevance::service::run_cli(argc, argv); }
