#include <wvcal/cli.hpp>

int main(int argc, char** argv)
{
        return wvcal::run_cli(argc, argv);
}
