import os
import joblib


def create_experiment(dataset='', model='gaussian', seed=0, analysis_name=None):
    """Returns an object of the class specified in analysis_name. This is really just a helper function, you can always
    import the analysis class directly. Analyses live in dc_bdl_tools.ExperimentLevel.Analyses

    Parameters
    ----------
    dataset: str
        Name of the dataset. Also used as the data directory when it points to a DCG1 dataset on disk.
    model: str
        The model tag ('gaussian', 'dc_gaussian' or 'dc_lognormal')
    seed: int
        Seed for data generation, initialization, batch sampling and dropout noise
    analysis_name: str
        The name of the analysis class you wish to instantiate. If not entered, a list of possible analyses will be
         printed.

    Returns
    -------
    Instantiated analysis class
    """
    from dc_bdl_tools.ExperimentLevel import Analyses
    if analysis_name is None:
        print('You must enter one of the following as an analysis_name:\n')
        for this_ana in Analyses.analysis_dict.keys():
            print('{}\n{}'.format(this_ana, Analyses.analysis_dict[this_ana].__doc__))
    else:
        try:
            return Analyses.analysis_dict[analysis_name](dataset, model, seed)
        except KeyError as e:
            print('{} is not a valid analysis name.'.format(e))


class ExperimentAnalysisPipeline(object):
    """
    Class for running multiple analyses in serial. Use when one analyses depends on the results of the previous, such
    as train -> predict -> evaluate.
    """
    def __init__(self, dataset='', model='gaussian', seed=0, analysis_name_list=None, analysis_params_list=None):
        """

        Parameters
        ----------
        dataset: str
            Name of the dataset
        model: str
            The model tag
        seed: int
            Seed of the experiment
        analysis_name_list:  list
            list of strings of valid analysis names
        analysis_params_list: list
            list of dictionaries of analysis parameters
        """

        if (analysis_name_list is None) or (analysis_params_list is None):
            raise ValueError('Both analysis_name_list and analysis_params_list must be entered.')

        if len(analysis_name_list) != len(analysis_params_list):
            raise ValueError('Both analysis_name_list and analysis_params_list must be the same length.')

        self.dataset = dataset
        self.model = model
        self.seed = seed
        self.analysis_name_list = analysis_name_list
        self.analysis_params_list = analysis_params_list
        self.analyses = self._create_analyses()

        # will hold results of final analysis in pipeline for convenience
        self.res = {}

    def _create_analyses(self):
        """
        Create each analysis using analysis_name_list and params in analysis_params_list.
        """
        analyses = []
        for name, params in zip(self.analysis_name_list, self.analysis_params_list):
            this_ana = create_experiment(dataset=self.dataset, model=self.model, seed=self.seed, analysis_name=name)
            if this_ana is None:
                raise ValueError('{} is not a valid analysis name.'.format(name))

            # set all the parameters
            for attr in params.items():
                setattr(this_ana, attr[0], attr[1])

            # add to list of analyses
            analyses.append(this_ana)

        return analyses

    def run(self):
        """
        Runs each analysis in the pipeline, in order. Passes the results of the previous analysis to the current
        analysis. The experiment data are loaded once and shared.
        """

        prev_res = {}
        prev_data = None
        for ana_num, analysis in enumerate(self.analyses):
            if ana_num > 0:
                analysis.res = prev_res
                if analysis.experiment_data is None:
                    analysis.experiment_data = prev_data
            analysis.run()
            prev_res = analysis.res
            prev_data = analysis.experiment_data
        self.res = prev_res

    def unload_data(self):
        for analysis in self.analyses:
            analysis.unload_data()


class ExperimentDataBase(object):
    """
    Base class for handling data IO and computation. Override .compute_data() to handle your specific type of data.

    Methods:
        load_data()
        unload_data()
        save_data()
        compute_data()
    """

    def __init__(self, dataset=None, model='gaussian', seed=0):

        # attributes for identification of the experiment
        self.dataset = dataset
        self.model = model
        self.seed = seed

        # base directory to save data
        self.base_dir = self._default_base_dir()
        self.save_dir = None
        self.save_file = None

        # this will hold the experiment data after load_data() is called
        self.experiment_data = None

        # read pickled data when present instead of regenerating
        self.load_data_if_file_exists = True

        # with no pickled data, do not compute either
        self.do_not_compute = False

        # ignore pickled data
        self.force_recompute = False

    def load_data(self):
        """
        Sets .experiment_data, reading the pickled data if allowed and present, otherwise calling .compute_data().
        """
        if self.dataset is None:
            print('Attribute dataset must be set before loading data.')
            return

        exists = self.save_file is not None and os.path.exists(self.save_file)
        if exists and self.load_data_if_file_exists and not self.force_recompute:
            print('%s: loading saved experiment_data.' % self.dataset)
            self.experiment_data = joblib.load(self.save_file)
        elif exists:
            print('%s: saved experiment_data ignored, recomputing.' % self.dataset)
        elif self.do_not_compute:
            print('%s: no saved experiment_data and do_not_compute is set.' % self.dataset)
            return

        if self.experiment_data is None:
            self.experiment_data = self.compute_data()

    def unload_data(self):
        self.experiment_data = None

    def save_data(self):
        """
        Saves self.experiment_data as a pickle to location defined by _update_save_path.
        """
        if self.experiment_data is None:
            print('Data must be loaded before saving. Use .load_data()')
            return

        if self.save_file is None:
            print('.save_file and .save_dir must be set before saving data.')
            return

        os.makedirs(self.save_dir, exist_ok=True)
        joblib.dump(self.experiment_data, self.save_file)

    def compute_data(self):
        """
        Override this. Should return data of some kind!

        """
        pass

    @staticmethod
    def _default_base_dir():
        """
        Default save location. This gets set when you create the class, but you can set it to whatever you want later.
        The DCBDL_BASE_DIR environment variable takes precedence.
        """
        if os.environ.get('DCBDL_BASE_DIR'):
            return os.environ['DCBDL_BASE_DIR']
        return os.path.join(os.path.expanduser('~'), 'dc_bdl')
