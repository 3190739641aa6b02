#include "icp_audit/cli.hpp"

int main(int argc, char** argv) { return icp::cli::run(argc, argv); }
