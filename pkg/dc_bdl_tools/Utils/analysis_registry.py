import importlib
import pkgutil


def discover_analyses(package_name, package_path, suffix='Analysis'):
    """
    Imports every module in a package and returns a dict of the classes whose names end with suffix.

    Modules that fail to import are reported and skipped, so one broken analysis does not hide the rest.
    """
    classes = {}
    for _, name, _ in pkgutil.iter_modules(package_path):
        try:
            module = importlib.import_module('%s.%s' % (package_name, name))
        except Exception as e:
            print('{} analysis not available: {}'.format(name, e))
            continue
        classes.update({cls: getattr(module, cls) for cls in dir(module) if cls.endswith(suffix)})
    return classes
