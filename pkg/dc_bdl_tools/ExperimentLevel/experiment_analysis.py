"""
Base class of the train, predict and evaluate analyses. Results are a dictionary in .res, pickled with joblib into a
directory next to the experiment data, one file per (model, seed).
"""

import os

import joblib

from dc_bdl_tools.experiment import ExperimentDataBase


class ExperimentAnalysisBase(ExperimentDataBase):
    """
    Subclasses set .res_str (the results file suffix) and implement .analysis(), which fills .res.

    .run() loads or computes the experiment data, then either reuses a results file on disk or calls .analysis()
    and writes the results.
    """

    def __init__(self, dataset=None, model='gaussian', seed=0):
        super(ExperimentAnalysisBase, self).__init__(dataset=dataset, model=model, seed=seed)

        # reuse a results file on disk instead of computing, when one exists
        self.load_res_if_file_exists = False

        # pickle .res after computing
        self.save_res = True

        # synthetic data are cheap to regenerate, so they are not pickled unless asked for
        self.auto_save_data = False

        # if False, .run() does not load data first
        self.ana_requires_data = True

        # never call .analysis(), only load
        self.do_not_compute_res = False

        # call .analysis() even if the results file exists
        self.force_analysis = False

        self.res_save_dir = None
        self.res_save_file = None
        self.res = {}

        # this is generally defined by a subclass
        self.res_str = ''

    @property
    def res_str(self):
        return self._res_str

    @res_str.setter
    def res_str(self, x):
        self._res_str = x
        self._update_res_save_path()

    @property
    def has_res_file(self):
        return self.res_save_file is not None and os.path.exists(self.res_save_file)

    def run(self):
        """
        Loads (or computes) the experiment data, then loads or computes the results.
        """
        if self.experiment_data is None and self.ana_requires_data:
            self.load_data()
            if self.auto_save_data and self.save_file is not None and not os.path.exists(self.save_file):
                self.save_data()

        self._update_res_save_path()
        if self.res_save_dir is not None:
            os.makedirs(self.res_save_dir, exist_ok=True)
        if self.load_res_if_file_exists:
            self.load_res_data()

        if self.do_not_compute_res:
            return
        if self.force_analysis or not self.has_res_file:
            self.analysis()
            if self.save_res:
                self.save_res_data()

    def analysis(self):
        """
        Override this. It should fill .res.
        """
        raise NotImplementedError('%s does not implement analysis()' % self.__class__.__name__)

    def load_res_data(self):
        """
        Merges a results file from disk into .res.
        """
        self._update_res_save_path()
        if self.has_res_file:
            print('%s: loading %s results for %s seed %d.' % (self.dataset, self.res_str, self.model, self.seed))
            self.res = {**self.res, **joblib.load(self.res_save_file)}
        else:
            print('%s: no %s results to load.' % (self.dataset, self.res_str))

    def save_res_data(self):
        """
        Pickles .res to .res_save_file.
        """
        self._update_res_save_path()
        if not self.res:
            print('%s: nothing to save. Use .load_res_data() or .analysis() first.' % self.dataset)
            return
        if self.res_save_file is None:
            return
        os.makedirs(self.res_save_dir, exist_ok=True)
        joblib.dump(self.res, self.res_save_file)

    def _update_res_save_path(self):
        """
        Results of every analysis class go to <data save dir>/../<ClassName>_res/<model>_<seed>_<res_str>.
        """
        save_dir = getattr(self, 'save_dir', None)
        if save_dir is None or not getattr(self, '_res_str', ''):
            return
        self.res_save_dir = os.path.join(os.path.split(save_dir)[0], self.__class__.__name__ + '_res')
        self.res_save_file = os.path.join(self.res_save_dir, '{}_{}_{}'.format(self.model, self.seed, self.res_str))
